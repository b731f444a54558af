//! Nearest x2 upsample followed by a 3x3 pad-1 convolution, computed without
//! materialising the upsampled image.
//!
//! Output pixel `(2i + a, 2j + b)` only sees input rows `i + a - 1 + dy` and
//! columns `j + b - 1 + dx` for `dy, dx` in {0, 1}, so each of the four
//! output phases `(a, b)` is a 2x2 convolution of the input with a kernel
//! obtained by summing taps of the 3x3 kernel.

use crate::error::{shape_err, Result};
use crate::numerics::float::gemm;
use crate::numerics::{Float, Tensor};

/// Phase-kernel tap `d` that 3x3 tap `k` folds into, for phase `a`.
const FOLD: [[usize; 3]; 2] = [[0, 1, 1], [0, 0, 1]];
/// Images unfolded side by side per GEMM.
const GROUP: usize = 16;

/// Row-major `c = a * b + c` with explicit leading dimensions.
#[allow(clippy::too_many_arguments)]
fn gemm_strided<T: Float>(m: usize, n: usize, k: usize, a: &[T], lda: usize, b: &[T], ldb: usize, c: &mut [T], ldc: usize) {
    assert!(a.len() >= (m - 1) * lda + k && b.len() >= (k - 1) * ldb + n && c.len() >= (m - 1) * ldc + n);
    // SAFETY: bounds asserted above for the strided extents touched.
    unsafe {
        T::gemm_raw(
            m, k, n, T::one(),
            a.as_ptr(), lda as isize, 1,
            b.as_ptr(), ldb as isize, 1,
            T::one(), c.as_mut_ptr(), ldc as isize, 1,
        );
    }
}

fn dims<T: Float>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = match *input.shape() {
        [n, c, h, w] => (n, c, h, w),
        _ => return shape_err(format!("upconv: expected rank-4 input, got {:?}", input.shape())),
    };
    match *kernel.shape() {
        [o, kc, 3, 3] if kc == c => Ok((n, c, h, w, o)),
        _ => shape_err(format!("upconv: kernel {:?} does not match input {:?}", kernel.shape(), input.shape())),
    }
}

/// `[4][C_out, C_in * 4]` phase kernels, rows `(c, dy, dx)`.
fn phase_kernels<T: Float>(kernel: &Tensor<T>, o: usize, c: usize) -> [Vec<T>; 4] {
    let k = kernel.data();
    [0, 1, 2, 3].map(|p| {
        let (a, b) = (p / 2, p % 2);
        let mut out = vec![T::zero(); o * c * 4];
        for oc in 0..o {
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let d = FOLD[a][ky] * 2 + FOLD[b][kx];
                        out[(oc * c + ci) * 4 + d] += k[((oc * c + ci) * 3 + ky) * 3 + kx];
                    }
                }
            }
        }
        out
    })
}

fn valid(n: usize, off: isize) -> (usize, usize) {
    match off {
        -1 => (1, n),
        0 => (0, n),
        _ => (0, n - 1),
    }
}

/// Unfolds one `[C, h, w]` input into `[C*4, h*w]` columns for phase `(a, b)`.
/// Rows are `ld` apart so several images can share one column block.
fn phase_im2col<T: Float>(img: &[T], c: usize, h: usize, w: usize, a: usize, b: usize, cols: &mut [T], ld: usize) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for dy in 0..2 {
            let oy = (a + dy) as isize - 1;
            let (y0, y1) = valid(h, oy);
            for dx in 0..2 {
                let ox = (b + dx) as isize - 1;
                let (x0, x1) = valid(w, ox);
                let row = &mut cols[(ci * 4 + dy * 2 + dx) * ld..][..hw];
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

/// Adjoint of [`phase_im2col`], accumulating into `img`.
fn phase_col2im<T: Float>(cols: &[T], c: usize, h: usize, w: usize, a: usize, b: usize, img: &mut [T], ld: usize) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for dy in 0..2 {
            let oy = (a + dy) as isize - 1;
            let (y0, y1) = valid(h, oy);
            for dx in 0..2 {
                let ox = (b + dx) as isize - 1;
                let (x0, x1) = valid(w, ox);
                let row = &cols[(ci * 4 + dy * 2 + dx) * ld..][..hw];
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

/// `[O, 2h, 2w]` plane set -> `[O, h*w]` samples of phase `(a, b)`.
fn gather_phase<T: Float>(src: &[T], o: usize, h: usize, w: usize, a: usize, b: usize, dst: &mut [T], ld: usize) {
    let w2 = 2 * w;
    for oc in 0..o {
        for i in 0..h {
            let srow = &src[oc * 4 * h * w + (2 * i + a) * w2..][..w2];
            let drow = &mut dst[oc * ld + i * w..][..w];
            for (j, d) in drow.iter_mut().enumerate() {
                *d = srow[2 * j + b];
            }
        }
    }
}

fn scatter_phase<T: Float>(src: &[T], o: usize, h: usize, w: usize, a: usize, b: usize, dst: &mut [T], ld: usize) {
    let w2 = 2 * w;
    for oc in 0..o {
        for i in 0..h {
            let srow = &src[oc * ld + i * w..][..w];
            let drow = &mut dst[oc * 4 * h * w + (2 * i + a) * w2..][..w2];
            for (j, &s) in srow.iter().enumerate() {
                drow[2 * j + b] = s;
            }
        }
    }
}

/// `conv3x3(upsample2(input)) + bias`: `[N, C, h, w] -> [N, O, 2h, 2w]`.
pub fn upconv2d_forward<T: Float>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w, o) = dims(input, kernel)?;
    bias.expect_shape(&[o], "upconv bias")?;
    let hw = h * w;
    let pk = phase_kernels(kernel, o, c);
    let mut out = Tensor::zeros(&[n, o, 2 * h, 2 * w]);
    let group = GROUP.min(n.max(1));
    let ld = group * hw;
    let mut cols = vec![T::zero(); c * 4 * ld];
    let mut tmp = vec![T::zero(); o * ld];
    for start in (0..n).step_by(group) {
        let m = group.min(n - start);
        for (p, k) in pk.iter().enumerate() {
            let (a, b) = (p / 2, p % 2);
            for j in 0..m {
                phase_im2col(input.item(start + j), c, h, w, a, b, &mut cols[j * hw..], ld);
            }
            for (oc, bv) in bias.data().iter().enumerate() {
                tmp[oc * ld..oc * ld + m * hw].fill(*bv);
            }
            gemm_strided(o, m * hw, c * 4, k, c * 4, &cols, ld, &mut tmp, ld);
            for j in 0..m {
                scatter_phase(&tmp[j * hw..], o, h, w, a, b, out.item_mut(start + j), ld);
            }
        }
    }
    Ok(out)
}

/// Gradient with respect to the (pre-upsample) input.
pub fn upconv2d_backward_input<T: Float>(kernel: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, o, h2, w2) = match *grad_out.shape() {
        [n, o, h2, w2] if h2 % 2 == 0 && w2 % 2 == 0 => (n, o, h2, w2),
        _ => return shape_err(format!("upconv: bad grad_out shape {:?}", grad_out.shape())),
    };
    let c = match *kernel.shape() {
        [ko, c, 3, 3] if ko == o => c,
        _ => return shape_err(format!("upconv: kernel {:?} vs grad {:?}", kernel.shape(), grad_out.shape())),
    };
    let (h, w) = (h2 / 2, w2 / 2);
    let hw = h * w;
    let pk = phase_kernels(kernel, o, c);
    let mut grad_in = Tensor::zeros(&[n, c, h, w]);
    let group = GROUP.min(n.max(1));
    let ld = group * hw;
    let mut cols = vec![T::zero(); c * 4 * ld];
    let mut g = vec![T::zero(); o * ld];
    for start in (0..n).step_by(group) {
        let m = group.min(n - start);
        for (p, k) in pk.iter().enumerate() {
            let (a, b) = (p / 2, p % 2);
            for j in 0..m {
                gather_phase(grad_out.item(start + j), o, h, w, a, b, &mut g[j * hw..], ld);
            }
            // cols = k^T g; k is [o, 4c], g is [o, ld], cols is [4c, ld].
            // SAFETY: every strided extent lies inside the three buffers.
            unsafe {
                T::gemm_raw(
                    c * 4, o, m * hw, T::one(),
                    k.as_ptr(), 1, (c * 4) as isize,
                    g.as_ptr(), ld as isize, 1,
                    T::zero(), cols.as_mut_ptr(), ld as isize, 1,
                );
            }
            for j in 0..m {
                phase_col2im(&cols[j * hw..], c, h, w, a, b, grad_in.item_mut(start + j), ld);
            }
        }
    }
    Ok(grad_in)
}

/// Accumulates kernel and bias gradients over the batch.
pub fn upconv2d_backward_params<T: Float>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<()> {
    let (n, c, h, w, o) = dims(input, grad_kernel)?;
    grad_out.expect_shape(&[n, o, 2 * h, 2 * w], "upconv grad_out")?;
    grad_bias.expect_shape(&[o], "upconv grad bias")?;
    let hw = h * w;
    let mut dk: [Vec<T>; 4] = [0, 1, 2, 3].map(|_| vec![T::zero(); o * c * 4]);
    let mut cols = vec![T::zero(); c * 4 * hw];
    let mut g = vec![T::zero(); o * hw];
    for i in 0..n {
        for (p, dkp) in dk.iter_mut().enumerate() {
            let (a, b) = (p / 2, p % 2);
            phase_im2col(input.item(i), c, h, w, a, b, &mut cols, hw);
            gather_phase(grad_out.item(i), o, h, w, a, b, &mut g, hw);
            gemm(false, true, o, c * 4, hw, T::one(), &g, &cols, T::one(), dkp);
        }
        let go = grad_out.item(i);
        let plane = 4 * hw;
        for (oc, gb) in grad_bias.data_mut().iter_mut().enumerate() {
            *gb += go[oc * plane..(oc + 1) * plane].iter().copied().sum::<T>();
        }
    }
    let gk = grad_kernel.data_mut();
    for (p, dkp) in dk.iter().enumerate() {
        let (a, b) = (p / 2, p % 2);
        for oc in 0..o {
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let d = FOLD[a][ky] * 2 + FOLD[b][kx];
                        gk[((oc * c + ci) * 3 + ky) * 3 + kx] += dkp[(oc * c + ci) * 4 + d];
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{conv2d_backward_input, conv2d_backward_params, conv2d_forward};
    use crate::numerics::ops::{upsample2_backward, upsample2_forward};
    use crate::numerics::RngStream;

    fn close(a: &Tensor<f64>, b: &Tensor<f64>) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn matches_upsample_then_conv() {
        let mut rng = RngStream::new(9);
        let x: Tensor<f64> = rng.normal_tensor(&[2, 3, 4, 5], 1.0);
        let k: Tensor<f64> = rng.normal_tensor(&[4, 3, 3, 3], 1.0);
        let bias: Tensor<f64> = rng.normal_tensor(&[4], 1.0);
        let up = upsample2_forward(&x).unwrap();
        let want = conv2d_forward(&up, &k, &bias).unwrap();
        close(&upconv2d_forward(&x, &k, &bias).unwrap(), &want);

        let g: Tensor<f64> = rng.normal_tensor(want.shape(), 1.0);
        let want_in = upsample2_backward(&conv2d_backward_input(&k, &g).unwrap()).unwrap();
        close(&upconv2d_backward_input(&k, &g).unwrap(), &want_in);

        let (mut gk1, mut gb1) = (Tensor::zeros(k.shape()), Tensor::zeros(&[4]));
        conv2d_backward_params(&up, &g, &mut gk1, &mut gb1).unwrap();
        let (mut gk2, mut gb2) = (Tensor::zeros(k.shape()), Tensor::zeros(&[4]));
        upconv2d_backward_params(&x, &g, &mut gk2, &mut gb2).unwrap();
        close(&gk2, &gk1);
        close(&gb2, &gb1);
    }
}
