use crate::error::{shape_err, Result};
use crate::numerics::{Float, Tensor};

/// 2x2, stride-2 max pooling. Returns the output and, for every output
/// element, the flat index of the selected input element (first maximum in
/// row-major window order).
pub fn maxpool2_forward<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = match *x.shape() {
        [n, c, h, w] if h % 2 == 0 && w % 2 == 0 => (n, c, h, w),
        _ => return shape_err(format!("maxpool2: expected [N, C, even H, even W], got {:?}", x.shape())),
    };
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + (2 * y) * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = (p * oh + y) * ow + xx;
                dst[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to its argmax input position.
pub fn maxpool2_backward<T: Float>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return shape_err("maxpool2 backward: argmax/grad length mismatch");
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(gx)
}

/// Nearest-neighbour x2 upsampling of `[N, C, H, W]`.
pub fn upsample2_forward<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *x.shape() {
        [n, c, h, w] => (n, c, h, w),
        _ => return shape_err(format!("upsample2: expected rank 4, got {:?}", x.shape())),
    };
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..oh {
            let row = &src[(p * h + y / 2) * w..][..w];
            let out_row = &mut dst[(p * oh + y) * ow..][..ow];
            for (xx, o) in out_row.iter_mut().enumerate() {
                *o = row[xx / 2];
            }
        }
    }
    Ok(out)
}

/// Sums each 2x2 output block back onto its source element.
pub fn upsample2_backward<T: Float>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = match *grad_out.shape() {
        [n, c, h, w] if h % 2 == 0 && w % 2 == 0 => (n, c, h, w),
        _ => return shape_err(format!("upsample2 backward: bad shape {:?}", grad_out.shape())),
    };
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    let src = grad_out.data();
    let dst = gx.data_mut();
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                dst[(p * h + y / 2) * w + xx / 2] += src[(p * oh + y) * ow + xx];
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_maximum() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 0.0, 1.0]).unwrap();
        let (y, idx) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        // tie in the second window resolves to the first element
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::<f32>::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = upsample2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let g = upsample2_backward(&Tensor::full(&[1, 1, 2, 4], 1.0f32)).unwrap();
        assert_eq!(g.data(), &[4.0, 4.0]);
    }
}
