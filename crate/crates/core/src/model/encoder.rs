use super::layers::{BatchNorm, Conv3x3, Dense};
use super::{Latents, LATENT_SHAPES};
use crate::error::{shape_err, Result};
use crate::numerics::ops::{self, BnCache, BnMode};
use crate::numerics::{Float, RngStream, Tensor};

/// Feedforward encoder (TinyFFN): conv-BN-GELU-pool twice, then two dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T = f32> {
    pub conv1: Conv3x3<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv3x3<T>,
    pub bn2: BatchNorm<T>,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    pub mode: BnMode,
    x: Tensor<T>,
    bn1: BnCache<T>,
    act1: Tensor<T>,
    arg1: Vec<usize>,
    bn2: BnCache<T>,
    act2: Tensor<T>,
    arg2: Vec<usize>,
    pre3: Tensor<T>,
    /// Feedforward latents z1..z4.
    pub ff: Latents<T>,
}

impl<T: Float> Encoder<T> {
    pub fn init(rng: &RngStream) -> Self {
        Self {
            conv1: Conv3x3::init(3, 32, &mut rng.derive(1)),
            bn1: BatchNorm::new(32),
            conv2: Conv3x3::init(32, 64, &mut rng.derive(2)),
            bn2: BatchNorm::new(64),
            fc1: Dense::init(4096, 256, &mut rng.derive(3)),
            fc2: Dense::init(256, 10, &mut rng.derive(4)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            bn1: self.bn1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            bn2: self.bn2.zeros_like(),
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("conv1.weight", &self.conv1.weight),
            ("conv1.bias", &self.conv1.bias),
            ("bn1.weight", &self.bn1.gamma),
            ("bn1.bias", &self.bn1.beta),
            ("conv2.weight", &self.conv2.weight),
            ("conv2.bias", &self.conv2.bias),
            ("bn2.weight", &self.bn2.gamma),
            ("bn2.bias", &self.bn2.beta),
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    /// Same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn named_buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("bn1.running_mean", &self.bn1.running_mean),
            ("bn1.running_var", &self.bn1.running_var),
            ("bn2.running_mean", &self.bn2.running_mean),
            ("bn2.running_var", &self.bn2.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.bn1.running_mean,
            &mut self.bn1.running_var,
            &mut self.bn2.running_mean,
            &mut self.bn2.running_var,
        ]
    }

    /// Runs the encoder on `[N, 3, 32, 32]` images and keeps a backward cache.
    pub fn forward_cached(&self, x: &Tensor<T>, mode: BnMode) -> Result<EncoderCache<T>> {
        match *x.shape() {
            [_, 3, 32, 32] => {}
            _ => return shape_err(format!("encoder input must be [N, 3, 32, 32], got {:?}", x.shape())),
        }
        let n = x.batch();
        let (act1, bn1) = self.bn1.forward(&self.conv1.forward(x)?, mode)?;
        let (z1, arg1) = ops::maxpool2_forward(&ops::gelu_forward(&act1))?;
        let (act2, bn2) = self.bn2.forward(&self.conv2.forward(&z1)?, mode)?;
        let (z2, arg2) = ops::maxpool2_forward(&ops::gelu_forward(&act2))?;
        let pre3 = self.fc1.forward(&z2.clone().reshape(&[n, 4096])?)?;
        let z3 = ops::gelu_forward(&pre3);
        let z4 = self.fc2.forward(&z3)?;
        Ok(EncoderCache { mode, x: x.clone(), bn1, act1, arg1, bn2, act2, arg2, pre3, ff: Latents { z: [z1, z2, z3, z4] } })
    }

    /// Feedforward latents only.
    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Latents<T>> {
        Ok(self.forward_cached(x, mode)?.ff)
    }

    /// Folds train-mode batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, cache: &EncoderCache<T>) {
        if cache.mode == BnMode::Train {
            self.bn1.update_running(&cache.bn1);
            self.bn2.update_running(&cache.bn2);
        }
    }

    /// Backpropagates loss gradients injected at any of the feedforward latents
    /// into parameter gradients accumulated in `grads`.
    pub fn backward(&self, cache: &EncoderCache<T>, latent_grads: [Option<&Tensor<T>>; 4], grads: &mut Self) -> Result<()> {
        let ff = &cache.ff;
        let n = cache.x.batch();
        for (l, g) in latent_grads.iter().enumerate() {
            if let Some(g) = g {
                g.same_shape(&ff.z[l], &format!("latent gradient z{}", l + 1))?;
            }
        }
        let mut dz3 = match latent_grads[2] {
            Some(g) => g.clone(),
            None => Tensor::zeros(ff.z[2].shape()),
        };
        if let Some(g4) = latent_grads[3] {
            self.fc2.backward_params(&ff.z[2], g4, &mut grads.fc2)?;
            dz3.axpy(T::one(), &self.fc2.backward_input(g4)?)?;
        }
        let dpre3 = ops::gelu_backward(&cache.pre3, &dz3)?;
        let flat2 = ff.z[1].clone().reshape(&[n, 4096])?;
        self.fc1.backward_params(&flat2, &dpre3, &mut grads.fc1)?;
        let mut dz2 = self.fc1.backward_input(&dpre3)?.reshape(ff.z[1].shape())?;
        if let Some(g2) = latent_grads[1] {
            dz2.axpy(T::one(), g2)?;
        }
        let dgelu2 = ops::maxpool2_backward(cache.act2.shape(), &cache.arg2, &dz2)?;
        let dact2 = ops::gelu_backward(&cache.act2, &dgelu2)?;
        let dconv2 = self.bn2.backward(&dact2, &cache.bn2, &mut grads.bn2)?;
        self.conv2.backward_params(&ff.z[0], &dconv2, &mut grads.conv2)?;
        let mut dz1 = self.conv2.backward_input(&dconv2)?;
        if let Some(g1) = latent_grads[0] {
            dz1.axpy(T::one(), g1)?;
        }
        let dgelu1 = ops::maxpool2_backward(cache.act1.shape(), &cache.arg1, &dz1)?;
        let dact1 = ops::gelu_backward(&cache.act1, &dgelu1)?;
        let dconv1 = self.bn1.backward(&dact1, &cache.bn1, &mut grads.bn1)?;
        self.conv1.backward_params(&cache.x, &dconv1, &mut grads.conv1)?;
        Ok(())
    }
}

/// Shapes of the feedforward latents for a batch of `n`.
pub fn latent_shapes(n: usize) -> [Vec<usize>; 4] {
    LATENT_SHAPES.map(|s| std::iter::once(n).chain(s.iter().copied()).collect())
}
