//! Central-difference validation of analytic gradients.

use super::{Float, RngStream, Tensor};
use crate::error::{PcnError, Result};

/// A scalar function of one tensor with an analytic gradient.
pub trait Differentiable<T: Float> {
    fn value(&self, x: &Tensor<T>) -> Result<f64>;
    fn gradient(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Adapts a `(value, gradient)` closure pair.
pub struct FnOp<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<T, V, G> Differentiable<T> for FnOp<V, G>
where
    T: Float,
    V: Fn(&Tensor<T>) -> Result<f64>,
    G: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    fn value(&self, x: &Tensor<T>) -> Result<f64> {
        (self.value)(x)
    }
    fn gradient(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        (self.gradient)(x)
    }
}

/// Scalarises a tensor-valued op as `sum(r * op(x))` for a fixed random `r`,
/// whose gradient is `op_backward(x, r)`.
pub struct Projected<T, F, B> {
    pub weights: Tensor<T>,
    pub forward: F,
    pub backward: B,
}

impl<T, F, B> Projected<T, F, B>
where
    T: Float,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    B: Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
{
    /// Draws projection weights shaped like `forward(point)`.
    pub fn new(point: &Tensor<T>, forward: F, backward: B, rng: &mut RngStream) -> Result<Self> {
        let out = forward(point)?;
        let weights = rng.normal_tensor(out.shape(), 1.0);
        Ok(Self { weights, forward, backward })
    }
}

impl<T, F, B> Differentiable<T> for Projected<T, F, B>
where
    T: Float,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    B: Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
{
    fn value(&self, x: &Tensor<T>) -> Result<f64> {
        let y = (self.forward)(x)?;
        self.weights.same_shape(&y, "projection")?;
        Ok(y.data().iter().zip(self.weights.data()).map(|(a, b)| a.as_f64() * b.as_f64()).sum())
    }
    fn gradient(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        (self.backward)(x, &self.weights)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Number of sampled coordinates.
    pub coords: usize,
    /// Coordinates are drawn among those whose analytic magnitude is at least
    /// this fraction of the largest one. Zero samples every coordinate.
    pub min_grad_fraction: f64,
}

impl GradCheckConfig {
    /// Defaults for the element precision: `h = 1e-3` in f32, `1e-5` in f64.
    /// In f32 the loss rounding (~1e-7 relative) swamps differences of
    /// near-zero gradient entries, so those coordinates are skipped.
    pub fn for_precision<T: Float>() -> Self {
        let f32_mode = T::FD_STEP > 1e-4;
        Self { step: T::FD_STEP, coords: 24, min_grad_fraction: if f32_mode { 0.05 } else { 0.0 } }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: Vec<usize>,
}

/// `|analytic - fd| / (|fd| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Compares the analytic gradient of `op` at `point` with central differences
/// at randomly sampled coordinates and returns the worst relative error.
pub fn grad_check<T: Float, O: Differentiable<T> + ?Sized>(
    op: &O,
    point: &Tensor<T>,
    rng: &mut RngStream,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let analytic = op.gradient(point)?;
    analytic.same_shape(point, "analytic gradient")?;
    if let Some(index) = analytic.data().iter().position(|g| !g.is_finite()) {
        return Err(PcnError::NonFinite { what: "analytic gradient".into(), index });
    }
    let max_g = analytic.max_abs();
    let floor = cfg.min_grad_fraction * max_g;
    let mut candidates: Vec<usize> =
        (0..point.len()).filter(|&i| analytic.data()[i].as_f64().abs() >= floor).collect();
    if candidates.is_empty() {
        candidates = (0..point.len()).collect();
    }
    let mut checked = Vec::with_capacity(cfg.coords);
    for _ in 0..cfg.coords.min(candidates.len()) {
        let pick = rng.below(candidates.len());
        checked.push(candidates.swap_remove(pick));
    }
    let mut worst = (0.0f64, 0usize);
    let mut x = point.clone();
    for &i in &checked {
        let orig = x.data()[i];
        x.data_mut()[i] = T::lit(orig.as_f64() + cfg.step);
        let plus_h = x.data()[i].as_f64() - orig.as_f64();
        let fp = op.value(&x)?;
        x.data_mut()[i] = T::lit(orig.as_f64() - cfg.step);
        let minus_h = orig.as_f64() - x.data()[i].as_f64();
        let fm = op.value(&x)?;
        x.data_mut()[i] = orig;
        // divide by the representable step actually taken
        let numeric = (fp - fm) / (plus_h + minus_h);
        let err = relative_error(analytic.data()[i].as_f64(), numeric);
        if !err.is_finite() {
            return Err(PcnError::NonFinite { what: "finite difference".into(), index: i });
        }
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport { max_rel_error: worst.0, worst_index: worst.1, checked })
}
