use serde::{Deserialize, Serialize};

use super::{Float, Tensor};
use crate::error::{shape_err, PcnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adamw,
    SgdMomentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self { kind: OptimizerKind::Adamw, lr, weight_decay, momentum: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        Self { kind: OptimizerKind::SgdMomentum, lr, weight_decay: 0.0, momentum, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimiser hyperparameters plus per-parameter moment buffers.
///
/// Buffers are allocated on the first update and must match the parameter
/// list (count and shapes) on every later call.
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: OptimizerConfig,
    step: u64,
    /// Adam first moment, or the SGD momentum buffer.
    first: Vec<Tensor<T>>,
    /// Adam second moment (empty for SGD).
    second: Vec<Tensor<T>>,
}

impl<T: Float> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// Restores state saved by a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) {
        self.step = step;
        self.first = first;
        self.second = second;
    }

    /// Zeroes moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }

    fn prepare(&mut self, params: &[&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(format!("optimizer: {} params but {} grads", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.same_shape(g, &format!("optimizer grad {i}"))?;
            g.check_finite(&format!("gradient of parameter {i}"))?;
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros_like(p)).collect();
            if self.config.kind == OptimizerKind::Adamw {
                self.second = params.iter().map(|p| Tensor::zeros_like(p)).collect();
            }
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params).any(|(m, p)| m.shape() != p.shape())
        {
            return shape_err("optimizer: parameter list changed between steps");
        }
        Ok(())
    }

    /// One update over every parameter; dispatches on the configured kind.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Adamw => adamw_step(self, params, grads),
            OptimizerKind::SgdMomentum => sgd_momentum_step(self, params, grads),
        }
    }
}

/// AdamW: decoupled decay `p *= 1 - lr*wd`, then a bias-corrected Adam step.
pub fn adamw_step<T: Float>(state: &mut OptimizerState<T>, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
    if state.config.kind != OptimizerKind::Adamw {
        return Err(PcnError::InvalidArgument("adamw_step on a non-AdamW optimizer".into()));
    }
    state.prepare(params, grads)?;
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = T::lit(1.0 - c.lr * c.weight_decay);
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *pj *= decay;
            *mj = b1 * *mj + one_b1 * gj;
            *vj = b2 * *vj + one_b2 * gj * gj;
            let m_hat = mj.as_f64() / bc1;
            let v_hat = vj.as_f64() / bc2;
            *pj -= T::lit(c.lr * m_hat / (v_hat.sqrt() + c.eps));
        }
    }
    Ok(())
}

/// `buf = momentum * buf + (g + wd * p)`, `p -= lr * buf`.
pub fn sgd_momentum_step<T: Float>(
    state: &mut OptimizerState<T>,
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
) -> Result<()> {
    if state.config.kind != OptimizerKind::SgdMomentum {
        return Err(PcnError::InvalidArgument("sgd_momentum_step on a non-SGD optimizer".into()));
    }
    state.prepare(params, grads)?;
    state.step += 1;
    let c = state.config;
    let (mu, lr, wd) = (T::lit(c.momentum), T::lit(c.lr), T::lit(c.weight_decay));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let buf = state.first[i].data_mut();
        for ((pj, &gj), bj) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
            *bj = mu * *bj + gj + wd * *pj;
            *pj -= lr * *bj;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn adamw_zero_grad_no_decay_is_identity() {
        let mut st = OptimizerState::new(OptimizerConfig::adamw(1e-4, 0.0));
        let mut p = scalar(1.5);
        st.step(&mut [&mut p], &[&scalar(0.0)]).unwrap();
        assert_eq!(p.data()[0], 1.5);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adamw_first_step_closed_form() {
        // m_hat = g, v_hat = g^2 after one step, so the update is lr * g / (|g| + eps)
        let mut st = OptimizerState::new(OptimizerConfig::adamw(1e-4, 0.0));
        let mut p = scalar(1.0);
        st.step(&mut [&mut p], &[&scalar(1.0)]).unwrap();
        let want = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adamw_decay_only_path() {
        let mut st = OptimizerState::new(OptimizerConfig::adamw(1e-4, 1e-4));
        let mut p = scalar(1.0);
        st.step(&mut [&mut p], &[&scalar(0.0)]).unwrap();
        assert_eq!(p.data()[0], 1.0 * (1.0 - 1e-4 * 1e-4));
    }

    #[test]
    fn sgd_momentum_hand_recursion() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd_momentum(0.05, 0.5));
        let mut p = scalar(0.0);
        st.step(&mut [&mut p], &[&scalar(1.0)]).unwrap();
        assert!((p.data()[0] + 0.05).abs() < 1e-15);
        st.step(&mut [&mut p], &[&scalar(1.0)]).unwrap();
        assert!((p.data()[0] + 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd_momentum(0.1, 0.0));
        let mut p = scalar(2.0);
        st.step(&mut [&mut p], &[&scalar(3.0)]).unwrap();
        st.step(&mut [&mut p], &[&scalar(3.0)]).unwrap();
        assert!((p.data()[0] - (2.0 - 0.3 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected_without_mutation() {
        let mut st = OptimizerState::new(OptimizerConfig::adamw(1e-3, 0.0));
        let mut p = scalar(1.0);
        assert!(st.step(&mut [&mut p], &[&scalar(f64::NAN)]).is_err());
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut st = OptimizerState::<f64>::new(OptimizerConfig::adamw(1e-3, 0.0));
        let mut p = scalar(1.0);
        assert!(sgd_momentum_step(&mut st, &mut [&mut p], &[&scalar(1.0)]).is_err());
    }
}
