//! 3x3, stride 1, padding 1 cross-correlation via im2col.

use crate::error::{shape_err, Result};
use crate::numerics::float::gemm;
use crate::numerics::{Float, Tensor};

const KS: usize = 3;
const TAPS: usize = KS * KS;

fn dims4<T: Float>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => shape_err(format!("{what}: expected rank-4 tensor, got {:?}", t.shape())),
    }
}

fn check_kernel<T: Float>(kernel: &Tensor<T>, c_in: usize) -> Result<usize> {
    match *kernel.shape() {
        [o, c, KS, KS] if c == c_in => Ok(o),
        [_, c, KS, KS] => shape_err(format!("conv2d: kernel expects {c} input channels, input has {c_in}")),
        _ => shape_err(format!("conv2d: kernel must be [C_out, C_in, 3, 3], got {:?}", kernel.shape())),
    }
}

/// Valid destination range `[lo, hi)` along an axis of length `n` for tap
/// offset `off` in {-1, 0, 1}.
fn valid(n: usize, off: isize) -> (usize, usize) {
    match off {
        -1 => (1, n),
        0 => (0, n),
        _ => (0, n - 1),
    }
}

/// Unfolds one `[C, H, W]` image into `[C*9, H*W]` columns.
fn im2col<T: Float>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..KS {
            let oy = ky as isize - 1;
            let (y0, y1) = valid(h, oy);
            for kx in 0..KS {
                let ox = kx as isize - 1;
                let (x0, x1) = valid(w, ox);
                let row = &mut cols[(ci * TAPS + ky * KS + kx) * hw..][..hw];
                row[..y0 * w].fill(T::zero());
                row[y1 * w..].fill(T::zero());
                for y in y0..y1 {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = (y as isize + oy) as usize;
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let sx0 = (x0 as isize + ox) as usize;
                    out[x0..x1].copy_from_slice(&plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im<T: Float>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    img.fill(T::zero());
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..KS {
            let oy = ky as isize - 1;
            let (y0, y1) = valid(h, oy);
            for kx in 0..KS {
                let ox = kx as isize - 1;
                let (x0, x1) = valid(w, ox);
                let row = &cols[(ci * TAPS + ky * KS + kx) * hw..][..hw];
                for y in y0..y1 {
                    let sy = (y as isize + oy) as usize;
                    let sx0 = (x0 as isize + ox) as usize;
                    let dst = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (d, &v) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `[N, C_in, H, W] * [C_out, C_in, 3, 3] + bias -> [N, C_out, H, W]`.
pub fn conv2d_forward<T: Float>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input, "conv2d input")?;
    let o = check_kernel(kernel, c)?;
    bias.expect_shape(&[o], "conv2d bias")?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, o, h, w]);
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for i in 0..n {
        im2col(input.item(i), c, h, w, &mut cols);
        let dst = out.item_mut(i);
        for (oc, b) in bias.data().iter().enumerate() {
            dst[oc * hw..(oc + 1) * hw].fill(*b);
        }
        gemm(false, false, o, hw, c * TAPS, T::one(), kernel.data(), &cols, T::one(), dst);
    }
    Ok(out)
}

/// Gradient with respect to the conv input.
pub fn conv2d_backward_input<T: Float>(kernel: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, o, h, w) = dims4(grad_out, "conv2d grad_out")?;
    let c = match *kernel.shape() {
        [ko, c, KS, KS] if ko == o => c,
        _ => return shape_err(format!("conv2d backward: kernel {:?} vs grad {:?}", kernel.shape(), grad_out.shape())),
    };
    let hw = h * w;
    let mut grad_in = Tensor::zeros(&[n, c, h, w]);
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for i in 0..n {
        gemm(true, false, c * TAPS, hw, o, T::one(), kernel.data(), grad_out.item(i), T::zero(), &mut cols);
        col2im(&cols, c, h, w, grad_in.item_mut(i));
    }
    Ok(grad_in)
}

/// Gradients with respect to kernel and bias, accumulated over the batch.
pub fn conv2d_backward_params<T: Float>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<()> {
    let (n, c, h, w) = dims4(input, "conv2d input")?;
    let o = check_kernel(grad_kernel, c)?;
    grad_out.expect_shape(&[n, o, h, w], "conv2d grad_out")?;
    grad_bias.expect_shape(&[o], "conv2d grad bias")?;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for i in 0..n {
        im2col(input.item(i), c, h, w, &mut cols);
        let g = grad_out.item(i);
        gemm(false, true, o, c * TAPS, hw, T::one(), g, &cols, T::one(), grad_kernel.data_mut());
        for (oc, gb) in grad_bias.data_mut().iter_mut().enumerate() {
            *gb += g[oc * hw..(oc + 1) * hw].iter().copied().sum::<T>();
        }
    }
    Ok(())
}
