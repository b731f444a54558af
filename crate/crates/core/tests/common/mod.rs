//! Direct-summation reference implementations, written independently of the
//! library kernels. All work on flat f64 slices.
#![allow(dead_code)]

use pcnprobe_core::model::{GenerativeChain, PcnModel};
use pcnprobe_core::numerics::Tensor;

pub fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// 3x3, pad 1 cross-correlation of `[n, c, h, w]` with `[o, c, 3, 3]`.
pub fn conv(x: &[f64], n: usize, c: usize, h: usize, w: usize, k: &[f64], b: &[f64], o: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o * h * w];
    for i in 0..n {
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b[oc];
                    for ic in 0..c {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let v = x[((i * c + ic) * h + sy as usize) * w + sx as usize];
                                s += v * k[((oc * c + ic) * 3 + dy) * 3 + dx];
                            }
                        }
                    }
                    out[((i * o + oc) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

/// `x W^T + b` with `W: [o, d]`.
pub fn dense(x: &[f64], n: usize, d: usize, wt: &[f64], b: &[f64], o: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            out[i * o + j] = b[j] + (0..d).map(|q| x[i * d + q] * wt[j * d + q]).sum::<f64>();
        }
    }
    out
}

pub fn upsample(x: &[f64], nc: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; nc * 4 * h * w];
    for p in 0..nc {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn maxpool(x: &[f64], nc: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; nc * h * w / 4];
    for p in 0..nc {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let at = |dy: usize, dx: usize| x[(p * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(p * (h / 2) + y) * (w / 2) + xx] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Eval-mode batch norm.
pub fn bn_eval(x: &mut [f64], n: usize, c: usize, hw: usize, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) {
    for i in 0..n {
        for ch in 0..c {
            let s = gamma[ch] / (var[ch] + 1e-5).sqrt();
            for v in &mut x[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                *v = (*v - mean[ch]) * s + beta[ch];
            }
        }
    }
}

/// Eval-mode encoder on `[n, 3, 32, 32]`: returns (z1, z2, z3, z4) flat.
pub fn encoder(m: &PcnModel<f32>, x: &[f64], n: usize) -> [Vec<f64>; 4] {
    let e = &m.encoder;
    let p = |t: &Tensor<f32>| to_f64(t);
    let mut a1 = conv(x, n, 3, 32, 32, &p(&e.conv1.weight), &p(&e.conv1.bias), 32);
    bn_eval(&mut a1, n, 32, 1024, &p(&e.bn1.gamma), &p(&e.bn1.beta), &p(&e.bn1.running_mean), &p(&e.bn1.running_var));
    a1.iter_mut().for_each(|v| *v = gelu(*v));
    let z1 = maxpool(&a1, n * 32, 32, 32);
    let mut a2 = conv(&z1, n, 32, 16, 16, &p(&e.conv2.weight), &p(&e.conv2.bias), 64);
    bn_eval(&mut a2, n, 64, 256, &p(&e.bn2.gamma), &p(&e.bn2.beta), &p(&e.bn2.running_mean), &p(&e.bn2.running_var));
    a2.iter_mut().for_each(|v| *v = gelu(*v));
    let z2 = maxpool(&a2, n * 64, 16, 16);
    let mut z3 = dense(&z2, n, 4096, &p(&e.fc1.weight), &p(&e.fc1.bias), 256);
    z3.iter_mut().for_each(|v| *v = gelu(*v));
    let z4 = dense(&z3, n, 256, &p(&e.fc2.weight), &p(&e.fc2.bias), 10);
    [z1, z2, z3, z4]
}

/// Top-down predictions (ẑ1, ẑ2, ẑ3) from flat latents.
pub fn predictions(c: &GenerativeChain<f64>, z: &[Vec<f64>; 4], n: usize) -> [Vec<f64>; 3] {
    let p3 = dense(&z[3], n, 10, c.g3.weight.data(), c.g3.bias.data(), 256);
    let p2 = dense(&z[2], n, 256, c.g2.weight.data(), c.g2.bias.data(), 4096);
    let up = upsample(&z[1], n * 64, 8, 8);
    let p1 = conv(&up, n, 64, 16, 16, c.g1.weight.data(), c.g1.bias.data(), 32);
    [p1, p2, p3]
}

/// Per-sample energy straight from the formula.
pub fn energy(c: &GenerativeChain<f64>, z: &[Vec<f64>; 4], target: &[f64], n: usize) -> Vec<f64> {
    let pred = predictions(c, z, n);
    (0..n)
        .map(|i| {
            let mut e = 0.0;
            for l in 0..3 {
                let d = z[l].len() / n;
                let sq: f64 = (0..d).map(|j| (z[l][i * d + j] - pred[l][i * d + j]).powi(2)).sum();
                e += 0.5 * sq / d as f64;
            }
            let logits = &z[3][i * 10..(i + 1) * 10];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            e + (0..10).map(|k| -target[i * 10 + k] * (logits[k] - lse)).sum::<f64>()
        })
        .collect()
}
