use crate::error::{shape_err, Result};
use crate::numerics::{Float, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-statistics mode (training) or frozen running statistics (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Saved forward quantities needed by the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub mode: BnMode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased variance (train mode only).
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
}

fn dims<T: Float>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => shape_err(format!("batchnorm: expected [N, C, H, W], got {:?}", x.shape())),
    }
}

/// Per-channel batch normalisation over `(N, H, W)`.
pub fn batchnorm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, hw) = dims(x)?;
    for (t, what) in [(gamma, "gamma"), (beta, "beta"), (running_mean, "running_mean"), (running_var, "running_var")] {
        t.expect_shape(&[c], what)?;
    }
    let eps = T::lit(BN_EPS);
    let count = n * hw;
    let mut mean = vec![T::zero(); c];
    let mut var_unbiased = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    match mode {
        BnMode::Train => {
            if count < 2 {
                return shape_err("batchnorm: train mode needs more than one value per channel");
            }
            for ch in 0..c {
                let mut s = 0.0f64;
                for i in 0..n {
                    s += x.item(i)[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0f64;
                for i in 0..n {
                    ss += x.item(i)[ch * hw..(ch + 1) * hw].iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
                }
                let var = ss / count as f64;
                mean[ch] = T::lit(m);
                var_unbiased[ch] = T::lit(ss / (count - 1) as f64);
                inv_std[ch] = T::lit(1.0 / (var + BN_EPS).sqrt());
            }
        }
        BnMode::Eval => {
            for ch in 0..c {
                mean[ch] = running_mean.data()[ch];
                inv_std[ch] = T::one() / (running_var.data()[ch] + eps).sqrt();
            }
        }
    }
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        let src = x.item(i);
        let xh = x_hat.item_mut(i);
        for ch in 0..c {
            for j in ch * hw..(ch + 1) * hw {
                xh[j] = (src[j] - mean[ch]) * inv_std[ch];
            }
        }
        let dst = y.item_mut(i);
        for ch in 0..c {
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for j in ch * hw..(ch + 1) * hw {
                dst[j] = g * xh[j] + b;
            }
        }
    }
    let (batch_mean, batch_var_unbiased) = match mode {
        BnMode::Train => (mean, var_unbiased),
        BnMode::Eval => (Vec::new(), Vec::new()),
    };
    Ok((y, BnCache { mode, x_hat, inv_std, batch_mean, batch_var_unbiased }))
}

/// Exponential moving update of running statistics from a train-mode cache.
pub fn batchnorm_update_running<T: Float>(cache: &BnCache<T>, running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>) {
    if cache.mode != BnMode::Train {
        return;
    }
    let m = T::lit(BN_MOMENTUM);
    let keep = T::one() - m;
    for (r, &b) in running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(&cache.batch_var_unbiased) {
        *r = keep * *r + m * b;
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Float>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    grad_out.same_shape(&cache.x_hat, "batchnorm grad_out")?;
    let (n, c, hw) = dims(grad_out)?;
    let count = T::lit((n * hw) as f64);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sg = 0.0f64;
        let mut sgx = 0.0f64;
        for i in 0..n {
            let g = &grad_out.item(i)[ch * hw..(ch + 1) * hw];
            let xh = &cache.x_hat.item(i)[ch * hw..(ch + 1) * hw];
            for (a, b) in g.iter().zip(xh) {
                sg += a.as_f64();
                sgx += a.as_f64() * b.as_f64();
            }
        }
        dbeta.data_mut()[ch] = T::lit(sg);
        dgamma.data_mut()[ch] = T::lit(sgx);
    }
    let mut dx = Tensor::zeros(grad_out.shape());
    for i in 0..n {
        let g = grad_out.item(i);
        let xh = cache.x_hat.item(i);
        let out = dx.item_mut(i);
        for ch in 0..c {
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Eval => {
                    for j in ch * hw..(ch + 1) * hw {
                        out[j] = g[j] * scale;
                    }
                }
                BnMode::Train => {
                    let mean_g = dbeta.data()[ch] / count;
                    let mean_gx = dgamma.data()[ch] / count;
                    for j in ch * hw..(ch + 1) * hw {
                        out[j] = scale * (g[j] - mean_g - xh[j] * mean_gx);
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn train_mode_normalises_each_channel() {
        let mut rng = RngStream::new(9);
        let x: Tensor<f64> = rng.normal_tensor(&[4, 2, 3, 3], 2.0);
        let ones = Tensor::full(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let (y, _) = batchnorm_forward(&x, &ones, &zeros, &zeros, &ones, BnMode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|i| y.item(i)[ch * 9..(ch + 1) * 9].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let ones = Tensor::full(&[1], 1.0);
        let zeros = Tensor::zeros(&[1]);
        let (_, cache) = batchnorm_forward(&x, &ones, &zeros, &zeros, &ones, BnMode::Train).unwrap();
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::full(&[1], 1.0);
        batchnorm_update_running(&cache, &mut rm, &mut rv);
        assert!((rm.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance of {1, 3} is 2
        assert!((rv.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_with_unit_stats_is_affine() {
        let x = Tensor::<f32>::new(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let ones = Tensor::full(&[1], 1.0);
        let zeros = Tensor::zeros(&[1]);
        let (y, _) = batchnorm_forward(&x, &ones, &zeros, &zeros, &ones, BnMode::Eval).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 2.0 / (1.0f32 + 1e-5).sqrt()).abs() < 1e-7);
    }
}
