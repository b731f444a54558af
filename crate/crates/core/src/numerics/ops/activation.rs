use crate::numerics::{Float, Tensor};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Float>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf())
}

/// `Phi(x) + x * phi(x)`.
pub fn gelu_derivative<T: Float>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf());
    let pdf = T::lit(INV_SQRT_2PI) * (-(x * x) * T::lit(0.5)).exp();
    cdf + x * pdf
}

pub fn gelu_forward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu)
}

/// `grad_in = grad_out * gelu'(x)` where `x` is the pre-activation.
pub fn gelu_backward<T: Float>(x: &Tensor<T>, grad_out: &Tensor<T>) -> crate::Result<Tensor<T>> {
    x.zip_map(grad_out, |a, g| g * gelu_derivative(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu(0.0f32), 0.0);
        assert!((gelu_derivative(0.0f64) - 0.5).abs() < 1e-15);
        let h = 1e-3f64;
        let fd = (gelu(h) - gelu(-h)) / (2.0 * h);
        assert!((fd - 0.5).abs() < 1e-4);
    }

    #[test]
    fn gelu_reference_values() {
        // x * Phi(x) at x = 1 and x = -2
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-2.0f64) - (-0.045_500_263_896_358_4)).abs() < 1e-12);
    }
}
