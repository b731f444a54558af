//! K-way energy probe and softmax-margin probe.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{kway_from_feedforward, SettleConfig};
use crate::error::{shape_err, Result};
use crate::model::{PcnModel, NUM_CLASSES};
use crate::numerics::ops::BnMode;
use crate::numerics::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Structural,
    Softmax,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Structural => "structural",
            ProbeKind::Softmax => "softmax",
        }
    }
}

/// One probe's verdict on one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub image_index: usize,
    pub probe: ProbeKind,
    pub predicted: usize,
    /// Confidence: energy gap (structural) or probability gap (softmax).
    pub margin: f64,
    pub correct: bool,
    /// Per-class energies or probabilities.
    pub scores: Vec<f64>,
}

/// Indices of the smallest and second-smallest entries, lowest index first on ties.
pub fn two_smallest(xs: &[f64]) -> (usize, usize) {
    assert!(xs.len() >= 2, "need at least two scores");
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    (order[0], order[1])
}

/// Indices of the largest and second-largest entries, lowest index first on ties.
pub fn two_largest(xs: &[f64]) -> (usize, usize) {
    assert!(xs.len() >= 2, "need at least two scores");
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    (order[0], order[1])
}

/// Structural verdict from settled energies: argmin, margin `E_(2) - E_(1)`.
pub fn structural_record(image_index: usize, energies: &[f64], label: usize) -> ProbeRecord {
    let (a, b) = two_smallest(energies);
    ProbeRecord {
        image_index,
        probe: ProbeKind::Structural,
        predicted: a,
        margin: energies[b] - energies[a],
        correct: a == label,
        scores: energies.to_vec(),
    }
}

/// Softmax verdict from logits: argmax, margin `p_(1) - p_(2)`.
pub fn softmax_record<T: Float>(image_index: usize, logits: &[T], label: usize) -> ProbeRecord {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let (a, b) = two_largest(&probs);
    ProbeRecord {
        image_index,
        probe: ProbeKind::Softmax,
        predicted: a,
        margin: probs[a] - probs[b],
        correct: a == label,
        scores: probs,
    }
}

fn check_labels<T: Float>(x: &Tensor<T>, labels: &[usize]) -> Result<()> {
    if x.batch() != labels.len() {
        return shape_err(format!("{} images but {} labels", x.batch(), labels.len()));
    }
    Ok(())
}

/// K-way energy probe for a batch; `first_index` is the global index of the
/// first image (it keys the Langevin noise streams and the records).
pub fn structural_probe<T: Float>(
    model: &PcnModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &SettleConfig,
    noise_seed: u64,
    first_index: usize,
) -> Result<Vec<ProbeRecord>> {
    check_labels(x, labels)?;
    let ff = model.encoder.forward(x, BnMode::Eval)?;
    let energies = kway_from_feedforward(&model.chain, &ff, NUM_CLASSES, cfg, noise_seed, first_index)?;
    Ok(energies.iter().zip(labels).enumerate().map(|(i, (e, &y))| structural_record(first_index + i, e, y)).collect())
}

/// Softmax-margin probe on the encoder logits (no inference loop).
pub fn softmax_probe<T: Float>(
    model: &PcnModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    first_index: usize,
) -> Result<Vec<ProbeRecord>> {
    check_labels(x, labels)?;
    let logits = model.encoder.forward(x, BnMode::Eval)?.z[3].clone();
    Ok((0..labels.len()).map(|i| softmax_record(first_index + i, logits.item(i), labels[i])).collect())
}

/// Both probes over a dataset, in batches, records in image order.
#[derive(Clone, Debug, Default)]
pub struct ProbeEvaluation {
    pub structural: Vec<ProbeRecord>,
    pub softmax: Vec<ProbeRecord>,
    /// Encoder logits per image, kept for the margin audit.
    pub logits: Vec<Vec<f64>>,
}

pub fn evaluate_probes<T: Float>(
    model: &PcnModel<T>,
    data: &Dataset,
    cfg: &SettleConfig,
    noise_seed: u64,
    batch_size: usize,
) -> Result<ProbeEvaluation> {
    let mut out = ProbeEvaluation::default();
    let n = data.len();
    for start in (0..n).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (x, labels) = data.batch(&idx);
        let x = x.cast::<T>();
        let ff = model.encoder.forward(&x, BnMode::Eval)?;
        let energies = kway_from_feedforward(&model.chain, &ff, NUM_CLASSES, cfg, noise_seed, start)?;
        for (j, &y) in labels.iter().enumerate() {
            let logits = ff.z[3].item(j);
            out.structural.push(structural_record(start + j, &energies[j], y));
            out.softmax.push(softmax_record(start + j, logits, y));
            out.logits.push(logits.iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}
