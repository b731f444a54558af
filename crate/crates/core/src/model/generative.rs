use super::layers::{Conv3x3, Dense};
use crate::error::{shape_err, PcnError, Result};
use crate::numerics::ops;
use crate::numerics::{Float, RngStream, Tensor};

/// Top-down chain g3: 10 -> 256, g2: 256 -> 4096 as (64, 8, 8),
/// g1: nearest x2 upsample then conv 64 -> 32.
///
/// Also used standalone as the post-hoc decoder (TinyDecoder).
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeChain<T = f32> {
    pub g3: Dense<T>,
    pub g2: Dense<T>,
    pub g1: Conv3x3<T>,
}

pub type DecoderModel<T = f32> = GenerativeChain<T>;

fn check_level(level: usize) -> Result<()> {
    if !(1..=3).contains(&level) {
        return Err(PcnError::InvalidArgument(format!("generative level must be 1, 2 or 3, got {level}")));
    }
    Ok(())
}

impl<T: Float> GenerativeChain<T> {
    pub fn init(rng: &RngStream) -> Self {
        Self {
            g3: Dense::init(10, 256, &mut rng.derive(3)),
            g2: Dense::init(256, 4096, &mut rng.derive(2)),
            g1: Conv3x3::init(64, 32, &mut rng.derive(1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { g3: self.g3.zeros_like(), g2: self.g2.zeros_like(), g1: self.g1.zeros_like() }
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("g3.weight", &self.g3.weight),
            ("g3.bias", &self.g3.bias),
            ("g2.weight", &self.g2.weight),
            ("g2.bias", &self.g2.bias),
            ("g1.weight", &self.g1.weight),
            ("g1.bias", &self.g1.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.g3.weight,
            &mut self.g3.bias,
            &mut self.g2.weight,
            &mut self.g2.bias,
            &mut self.g1.weight,
            &mut self.g1.bias,
        ]
    }

    /// `ẑ_l = g_l(z_{l+1})` for `level` in 1..=3.
    pub fn predict(&self, level: usize, upper: &Tensor<T>) -> Result<Tensor<T>> {
        check_level(level)?;
        let n = upper.batch();
        match level {
            3 => {
                upper.expect_shape(&[n, 10], "g3 input")?;
                self.g3.forward(upper)
            }
            2 => {
                upper.expect_shape(&[n, 256], "g2 input")?;
                self.g2.forward(upper)?.reshape(&[n, 64, 8, 8])
            }
            _ => {
                upper.expect_shape(&[n, 64, 8, 8], "g1 input")?;
                ops::upconv2d_forward(upper, &self.g1.weight, &self.g1.bias)
            }
        }
    }

    /// Gradient with respect to `z_{l+1}` given the gradient at the prediction.
    pub fn backward_input(&self, level: usize, grad_pred: &Tensor<T>) -> Result<Tensor<T>> {
        check_level(level)?;
        let n = grad_pred.batch();
        match level {
            3 => self.g3.backward_input(grad_pred),
            2 => self.g2.backward_input(&grad_pred.clone().reshape(&[n, 4096])?),
            _ => ops::upconv2d_backward_input(&self.g1.weight, grad_pred),
        }
    }

    /// Accumulates parameter gradients of level `l` into `grads`.
    pub fn backward_params(&self, level: usize, upper: &Tensor<T>, grad_pred: &Tensor<T>, grads: &mut Self) -> Result<()> {
        check_level(level)?;
        let n = upper.batch();
        if grad_pred.batch() != n {
            return shape_err("generative backward: batch mismatch");
        }
        match level {
            3 => self.g3.backward_params(upper, grad_pred, &mut grads.g3),
            2 => self.g2.backward_params(upper, &grad_pred.clone().reshape(&[n, 4096])?, &mut grads.g2),
            _ => ops::upconv2d_backward_params(upper, grad_pred, &mut grads.g1.weight, &mut grads.g1.bias),
        }
    }
}
