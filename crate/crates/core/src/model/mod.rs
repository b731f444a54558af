//! TinyConvPCN: encoder, generative chain and checkpoint I/O.

pub mod checkpoint;
pub mod encoder;
pub mod generative;
pub mod layers;

pub use checkpoint::Checkpoint;
pub use encoder::{latent_shapes, Encoder, EncoderCache};
pub use generative::{DecoderModel, GenerativeChain};

use crate::error::Result;
use crate::numerics::{Float, RngStream, Tensor};

/// Per-item latent shapes z1..z4.
pub const LATENT_SHAPES: [&[usize]; 4] = [&[32, 16, 16], &[64, 8, 8], &[256], &[10]];
pub const NUM_CLASSES: usize = 10;

pub type TinyFfn<T = f32> = Encoder<T>;

/// Four latent tensors `z[0] = z1 .. z[3] = z4`, batch-leading.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents<T = f32> {
    pub z: [Tensor<T>; 4],
}

impl<T: Float> Latents<T> {
    pub fn zeros(n: usize) -> Self {
        Self { z: latent_shapes(n).map(|s| Tensor::zeros(&s)) }
    }

    pub fn batch(&self) -> usize {
        self.z[0].batch()
    }

    pub fn repeat_items(&self, times: usize) -> Self {
        Self { z: [0, 1, 2, 3].map(|l| self.z[l].repeat_items(times)) }
    }

    pub fn select_items(&self, idx: &[usize]) -> Self {
        Self { z: [0, 1, 2, 3].map(|l| self.z[l].select_items(idx)) }
    }

    pub fn cast<U: Float>(&self) -> Latents<U> {
        Latents { z: [0, 1, 2, 3].map(|l| self.z[l].cast()) }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.batch();
        for (l, s) in latent_shapes(n).iter().enumerate() {
            self.z[l].expect_shape(s, &format!("z{}", l + 1))?;
        }
        Ok(())
    }
}

/// Anything with named trainable parameters and (optionally) buffers.
pub trait Module<T: Float> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)>;
    /// Same order as [`Module::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

impl<T: Float> Module<T> for Encoder<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        Encoder::named_params(self).into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Encoder::params_mut(self)
    }
    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Encoder::named_buffers(self).into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Encoder::buffers_mut(self)
    }
}

impl<T: Float> Module<T> for GenerativeChain<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        GenerativeChain::named_params(self).into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        GenerativeChain::params_mut(self)
    }
}

/// Encoder plus generative chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PcnModel<T = f32> {
    pub encoder: Encoder<T>,
    pub chain: GenerativeChain<T>,
}

impl<T: Float> PcnModel<T> {
    /// Fan-in uniform weights, zero biases, unit BN scale; encoder and chain
    /// draw from separate streams of `seed`.
    pub fn init(seed: u64) -> Self {
        let root = RngStream::new(seed);
        Self { encoder: Encoder::init(&root.derive(100)), chain: GenerativeChain::init(&root.derive(200)) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { encoder: self.encoder.zeros_like(), chain: self.chain.zeros_like() }
    }

    pub fn cast<U: Float>(&self) -> PcnModel<U> {
        let mut out = PcnModel::<U>::init(0);
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.named_params()) {
            *dst = src.cast();
        }
        for (dst, (_, src)) in out.buffers_mut().into_iter().zip(self.named_buffers()) {
            *dst = src.cast();
        }
        out
    }
}

impl<T: Float> Module<T> for PcnModel<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let enc = Module::named_params(&self.encoder).into_iter().map(|(n, t)| (format!("encoder.{n}"), t));
        let gen = Module::named_params(&self.chain).into_iter().map(|(n, t)| (format!("chain.{n}"), t));
        enc.chain(gen).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Module::params_mut(&mut self.encoder);
        v.extend(Module::params_mut(&mut self.chain));
        v
    }
    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Module::named_buffers(&self.encoder).into_iter().map(|(n, t)| (format!("encoder.{n}"), t)).collect()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Module::buffers_mut(&mut self.encoder)
    }
}
