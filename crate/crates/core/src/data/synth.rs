//! Class-conditional Gaussian images for fast runs without CIFAR-10.
//!
//! Each class mean is a smooth pattern (a few Gaussian bumps per channel);
//! the K means are orthonormalised and scaled by `separation * noise`, so
//! for isotropic pixel noise the Bayes accuracy depends only on
//! `separation` and K (see [`bayes_accuracy`]).

use super::{Dataset, Provenance, Split};
use crate::error::{PcnError, Result};
use crate::numerics::{RngStream, Tensor};

const DIM: usize = 3 * 32 * 32;
const BUMPS: usize = 3;
const BUMP_WIDTH: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    /// Per-pixel noise standard deviation.
    pub noise: f64,
    /// Distance between any two class means, in units of `noise`, divided by sqrt 2.
    pub separation: f64,
}

impl SynthSpec {
    /// Separation giving Bayes accuracy 0.85 at K = 10.
    pub fn default_for(k: usize) -> Self {
        Self { noise: 0.5, separation: separation_for_accuracy(k, 0.85) }
    }
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `P(correct) = ∫ φ(u) Φ(u + d)^(K-1) du` for orthonormal means scaled by
/// `d` under unit isotropic noise; composite Simpson on [-12, 12].
pub fn bayes_accuracy(k: usize, d: f64) -> f64 {
    let (lo, hi, n) = (-12.0, 12.0, 4800usize);
    let h = (hi - lo) / n as f64;
    let f = |u: f64| phi(u) * big_phi(u + d).powi(k as i32 - 1);
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Bisection inverse of [`bayes_accuracy`] in `d`.
pub fn separation_for_accuracy(k: usize, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if bayes_accuracy(k, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Orthonormal smooth class patterns, shared by every split of a seed.
pub fn class_patterns(k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::with_stream(seed, 0x5e7d_0001);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = vec![0.0; DIM];
        for c in 0..3 {
            for _ in 0..BUMPS {
                let (cy, cx) = (rng.uniform_range(4.0, 28.0), rng.uniform_range(4.0, 28.0));
                let amp = rng.normal();
                for y in 0..32 {
                    for x in 0..32 {
                        let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        v[c * 1024 + y * 32 + x] += amp * (-r2 / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp();
                    }
                }
            }
        }
        // Gram-Schmidt (twice for stability)
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// `n` images with labels `i % k` (balanced in every prefix that is a
/// multiple of `k`), clamped to [-3, 3]. Train and test share class means
/// but use independent noise.
pub fn synth_dataset(k: usize, n: usize, spec: SynthSpec, seed: u64, split: Split) -> Result<Dataset> {
    if k == 0 || k > 10 {
        return Err(PcnError::InvalidArgument(format!("synthetic classes must be in 1..=10, got {k}")));
    }
    if n % k != 0 {
        return Err(PcnError::InvalidArgument(format!("n = {n} is not divisible by k = {k}")));
    }
    if spec.noise < 0.0 || spec.separation < 0.0 {
        return Err(PcnError::InvalidArgument("noise and separation must be non-negative".into()));
    }
    let patterns = class_patterns(k, seed);
    let scale = spec.separation * if spec.noise > 0.0 { spec.noise } else { 1.0 };
    let stream = match split {
        Split::Train => 0x5e7d_0002,
        Split::Test => 0x5e7d_0003,
    };
    let mut rng = RngStream::with_stream(seed, stream);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut data = vec![0f32; n * DIM];
    let mut noise = vec![0f64; DIM];
    for (i, &y) in labels.iter().enumerate() {
        rng.fill_normal(&mut noise, spec.noise);
        for ((o, m), e) in data[i * DIM..(i + 1) * DIM].iter_mut().zip(&patterns[y]).zip(&noise) {
            *o = (scale * m + e).clamp(-3.0, 3.0) as f32;
        }
    }
    Ok(Dataset {
        images: Tensor::new(&[n, 3, 32, 32], data)?,
        labels,
        split,
        provenance: Provenance::Synthetic,
        num_classes: k,
    })
}
