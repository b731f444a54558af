use crate::error::Result;
use crate::numerics::ops::{self, BnCache, BnMode};
use crate::numerics::{Float, RngStream, Tensor};

/// Uniform in `±1/sqrt(fan_in)` (the Kaiming-uniform default with `a = sqrt(5)`).
fn fan_in_uniform<T: Float>(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    rng.uniform_tensor(shape, -bound, bound)
}

/// 3x3, stride 1, pad 1 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Float> Conv3x3<T> {
    pub fn init(c_in: usize, c_out: usize, rng: &mut RngStream) -> Self {
        Self { weight: fan_in_uniform(&[c_out, c_in, 3, 3], c_in * 9, rng), bias: Tensor::zeros(&[c_out]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: Tensor::zeros_like(&self.weight), bias: Tensor::zeros_like(&self.bias) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_forward(x, &self.weight, &self.bias)
    }

    pub fn backward_input(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_backward_input(&self.weight, grad_out)
    }

    pub fn backward_params(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<()> {
        ops::conv2d_backward_params(x, grad_out, &mut grads.weight, &mut grads.bias)
    }
}

/// Affine layer with `weight: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Float> Dense<T> {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        Self { weight: fan_in_uniform(&[fan_out, fan_in], fan_in, rng), bias: Tensor::zeros(&[fan_out]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: Tensor::zeros_like(&self.weight), bias: Tensor::zeros_like(&self.bias) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear_forward(x, &self.weight, &self.bias)
    }

    pub fn backward_input(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear_backward_input(&self.weight, grad_out)
    }

    pub fn backward_params(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<()> {
        ops::linear_backward_params(x, grad_out, &mut grads.weight, &mut grads.bias)
    }
}

/// Per-channel batch norm; running statistics are buffers, not parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Float> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        Self {
            gamma: Tensor::zeros(&[c]),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::zeros(&[c]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<(Tensor<T>, BnCache<T>)> {
        ops::batchnorm_forward(x, &self.gamma, &self.beta, &self.running_mean, &self.running_var, mode)
    }

    pub fn update_running(&mut self, cache: &BnCache<T>) {
        ops::batchnorm_update_running(cache, &mut self.running_mean, &mut self.running_var);
    }

    /// Returns the input gradient and accumulates scale/shift gradients.
    pub fn backward(&self, grad_out: &Tensor<T>, cache: &BnCache<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let (dx, dg, db) = ops::batchnorm_backward(grad_out, &self.gamma, cache)?;
        grads.gamma.axpy(T::one(), &dg)?;
        grads.beta.axpy(T::one(), &db)?;
        Ok(dx)
    }
}
