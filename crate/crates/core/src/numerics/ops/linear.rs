use crate::error::{shape_err, Result};
use crate::numerics::float::gemm;
use crate::numerics::{Float, Tensor};

fn dims<T: Float>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, fin) = match *input.shape() {
        [n, f] => (n, f),
        _ => return shape_err(format!("linear: input must be [N, in], got {:?}", input.shape())),
    };
    match *weight.shape() {
        [out, wi] if wi == fin => Ok((n, fin, out)),
        _ => shape_err(format!("linear: weight {:?} does not accept input {:?}", weight.shape(), input.shape())),
    }
}

/// `y = x W^T + b` with `W: [out, in]`.
pub fn linear_forward<T: Float>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin, out) = dims(input, weight)?;
    bias.expect_shape(&[out], "linear bias")?;
    let mut y = Tensor::zeros(&[n, out]);
    for i in 0..n {
        y.item_mut(i).copy_from_slice(bias.data());
    }
    gemm(false, true, n, out, fin, T::one(), input.data(), weight.data(), T::one(), y.data_mut());
    Ok(y)
}

pub fn linear_backward_input<T: Float>(weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, fin) = match *weight.shape() {
        [o, i] => (o, i),
        _ => return shape_err("linear: weight must be rank 2"),
    };
    grad_out.expect_shape(&[grad_out.batch(), out], "linear grad_out")?;
    let n = grad_out.batch();
    let mut gx = Tensor::zeros(&[n, fin]);
    gemm(false, false, n, fin, out, T::one(), grad_out.data(), weight.data(), T::zero(), gx.data_mut());
    Ok(gx)
}

/// Accumulates `dW += g^T x` and `db += sum_n g`.
pub fn linear_backward_params<T: Float>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<()> {
    let (n, fin, out) = dims(input, grad_weight)?;
    grad_out.expect_shape(&[n, out], "linear grad_out")?;
    grad_bias.expect_shape(&[out], "linear grad bias")?;
    gemm(true, false, out, fin, n, T::one(), grad_out.data(), input.data(), T::one(), grad_weight.data_mut());
    for i in 0..n {
        for (gb, &g) in grad_bias.data_mut().iter_mut().zip(grad_out.item(i)) {
            *gb += g;
        }
    }
    Ok(())
}
