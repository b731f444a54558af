//! Margin decomposition and latent-movement diagnostics.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{kway_from_feedforward, settle_from_input, SettleConfig};
use crate::error::{shape_err, PcnError, Result};
use crate::metrics::pearson;
use crate::model::{PcnModel, NUM_CLASSES};
use crate::numerics::ops::{one_hot, BnMode};
use crate::numerics::{Float, Tensor};
use crate::probes::{two_largest, two_smallest};

/// `M = L + D` at the energy-ranked top two hypotheses `a`, `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub image_index: usize,
    pub first: usize,
    pub second: usize,
    /// `E_b - E_a`.
    pub energy_margin: f64,
    /// `log p_a - log p_b` under the encoder softmax.
    pub logsoftmax_margin: f64,
    /// `M - L`.
    pub residual: f64,
    pub structural_correct: bool,
    pub softmax_correct: bool,
    /// `log p_(1) - log p_(2)` with the softmax's own ranking (verbose only).
    pub softmax_ranked_margin: Option<f64>,
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn decompose(image_index: usize, energies: &[f64], logits: &[f64], label: usize, verbose: bool) -> Result<DecompositionRecord> {
    if energies.len() != logits.len() || energies.len() < 2 {
        return shape_err(format!("decompose: {} energies vs {} logits", energies.len(), logits.len()));
    }
    let (a, b) = two_smallest(energies);
    let logp = log_softmax_row(logits);
    let m = energies[b] - energies[a];
    let l = logp[a] - logp[b];
    let (s1, s2) = two_largest(&logp);
    Ok(DecompositionRecord {
        image_index,
        first: a,
        second: b,
        energy_margin: m,
        logsoftmax_margin: l,
        residual: m - l,
        structural_correct: a == label,
        softmax_correct: s1 == label,
        softmax_ranked_margin: verbose.then(|| logp[s1] - logp[s2]),
    })
}

/// Settles all K hypotheses for a batch and decomposes each image's margin.
#[allow(clippy::too_many_arguments)]
pub fn decompose_batch<T: Float>(
    model: &PcnModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &SettleConfig,
    noise_seed: u64,
    first_index: usize,
    verbose: bool,
) -> Result<Vec<DecompositionRecord>> {
    if x.batch() != labels.len() {
        return shape_err(format!("{} images but {} labels", x.batch(), labels.len()));
    }
    let ff = model.encoder.forward(x, BnMode::Eval)?;
    let energies = kway_from_feedforward(&model.chain, &ff, NUM_CLASSES, cfg, noise_seed, first_index)?;
    (0..labels.len())
        .map(|i| {
            let logits: Vec<f64> = ff.z[3].item(i).iter().map(|v| v.as_f64()).collect();
            decompose(first_index + i, &energies[i], &logits, labels[i], verbose)
        })
        .collect()
}

/// `(corr(D, correct), corr(L, correct))` with structural correctness as 1/0.
pub fn residual_correlation(records: &[DecompositionRecord]) -> Result<(f64, f64)> {
    let c: Vec<f64> = records.iter().map(|r| if r.structural_correct { 1.0 } else { 0.0 }).collect();
    let d: Vec<f64> = records.iter().map(|r| r.residual).collect();
    let l: Vec<f64> = records.iter().map(|r| r.logsoftmax_margin).collect();
    Ok((pearson(&d, &c)?, pearson(&l, &c)?))
}

/// Largest `|M - L - D|` over a record set.
pub fn identity_violation(records: &[DecompositionRecord]) -> f64 {
    records
        .iter()
        .map(|r| (r.energy_margin - r.logsoftmax_margin - r.residual).abs())
        .fold(0.0, f64::max)
}

/// How far label-clamped inference moves the latents away from the
/// feedforward pass, for layers h1..h3.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoopReport {
    pub n_images: usize,
    pub steps: usize,
    pub sigma: f64,
    pub mean_abs_delta: [f64; 3],
    pub mean_abs_grad: [f64; 3],
    pub mse_vs_ff: [f64; 3],
    pub delta_range: [f64; 2],
    pub grad_range: [f64; 2],
    pub mse_range: [f64; 2],
    pub energy_initial: f64,
    pub energy_final: f64,
    /// `(E_initial - E_final) / E_initial`.
    pub relative_energy_decrease: f64,
    /// Share of images whose own energy did not increase.
    pub fraction_non_increasing: f64,
}

fn range(v: &[f64; 3]) -> [f64; 2] {
    [v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)]
}

/// Settles every image with `z4` clamped to its label and aggregates the
/// per-batch telemetry, weighted by batch size. Langevin noise is not
/// supported here: the diagnostic is about the deterministic dynamics.
pub fn noop_report<T: Float>(model: &PcnModel<T>, data: &Dataset, cfg: &SettleConfig, batch_size: usize) -> Result<NoopReport> {
    if cfg.sigma != 0.0 {
        return Err(PcnError::InvalidArgument("no-op diagnostic runs with sigma = 0".into()));
    }
    if data.len() == 0 {
        return Err(PcnError::InvalidArgument("no-op diagnostic on an empty dataset".into()));
    }
    let cfg = SettleConfig { telemetry: true, keep_last: 0, ..*cfg };
    let mut rep = NoopReport { steps: cfg.steps, sigma: cfg.sigma, ..Default::default() };
    let mut non_increasing = 0usize;
    for start in (0..data.len()).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size).min(data.len())).collect();
        let (x, labels) = data.batch(&idx);
        let x = x.cast::<T>();
        let target = one_hot::<T>(&labels, NUM_CLASSES)?;
        let (_, out) = settle_from_input(model, &x, &target, &cfg, None)?;
        let tel = out.telemetry.expect("telemetry requested");
        let w = idx.len() as f64;
        for l in 0..3 {
            rep.mean_abs_delta[l] += w * tel.mean_abs_delta[l];
            rep.mean_abs_grad[l] += w * tel.mean_abs_grad[l];
            rep.mse_vs_ff[l] += w * tel.mse_vs_ff[l];
        }
        rep.energy_initial += w * tel.energy_initial;
        rep.energy_final += w * tel.energy_final;
        non_increasing += out.energy_initial.iter().zip(&out.energy_final).filter(|(a, b)| b.total <= a.total).count();
        rep.n_images += idx.len();
    }
    let n = rep.n_images as f64;
    for l in 0..3 {
        rep.mean_abs_delta[l] /= n;
        rep.mean_abs_grad[l] /= n;
        rep.mse_vs_ff[l] /= n;
    }
    rep.energy_initial /= n;
    rep.energy_final /= n;
    rep.relative_energy_decrease =
        if rep.energy_initial > 0.0 { (rep.energy_initial - rep.energy_final) / rep.energy_initial } else { 0.0 };
    rep.fraction_non_increasing = non_increasing as f64 / n;
    rep.delta_range = range(&rep.mean_abs_delta);
    rep.grad_range = range(&rep.mean_abs_grad);
    rep.mse_range = range(&rep.mse_vs_ff);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_energies_give_zero_margin() {
        let r = decompose(0, &[2.0; 10], &[0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0, true).unwrap();
        assert_eq!((r.first, r.second, r.energy_margin), (0, 1, 0.0));
        assert!((r.logsoftmax_margin - 0.2).abs() < 1e-12);
        assert_eq!(r.residual, -r.logsoftmax_margin);
        assert!((r.softmax_ranked_margin.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn identity_holds() {
        let e = [3.0, 1.0, 2.5, 4.0];
        let z = [1.0, -2.0, 0.5, 0.0];
        let r = decompose(7, &e, &z, 1, false).unwrap();
        assert_eq!((r.first, r.second), (1, 2));
        assert!((r.energy_margin - 1.5).abs() < 1e-15);
        assert!((r.logsoftmax_margin + 2.5).abs() < 1e-12);
        assert!(identity_violation(&[r]) < 1e-12);
    }
}
