//! Checks over the artifacts of finished runs, used by the acceptance target.

use std::fmt;

use pcnprobe_cli::output::{DecompositionRow, Manifest, ProbeRecordRow, ResultRow};
use pcnprobe_core::metrics::pearson;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(id: u32, name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { id, name: name.into(), pass, detail: detail.into() }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{:>2}] {}: {}", self.id, self.name, self.detail)
    }
}

pub fn last_epoch(results: &[ResultRow]) -> Option<usize> {
    results.iter().map(|r| r.epoch).max()
}

pub fn epochs(results: &[ResultRow]) -> Vec<usize> {
    let mut e: Vec<usize> = results.iter().map(|r| r.epoch).collect();
    e.sort_unstable();
    e.dedup();
    e
}

pub fn cell<'a>(results: &'a [ResultRow], epoch: usize, probe: &str, sigma: Option<f64>) -> Option<&'a ResultRow> {
    results.iter().find(|r| r.epoch == epoch && r.probe == probe && r.sigma == sigma)
}

/// Largest rise between neighbouring values; zero or negative when the
/// sequence never goes up.
pub fn max_adjacent_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// Share of images where the structural probe (at `sigma`) and the softmax
/// probe pick the same class.
pub fn argmax_agreement(records: &[ProbeRecordRow], epoch: usize, sigma: f64) -> Option<f64> {
    let structural: Vec<&ProbeRecordRow> =
        records.iter().filter(|r| r.epoch == epoch && r.probe == "structural" && r.sigma == Some(sigma)).collect();
    let softmax: Vec<&ProbeRecordRow> = records.iter().filter(|r| r.epoch == epoch && r.probe == "softmax").collect();
    if structural.is_empty() || structural.len() != softmax.len() {
        return None;
    }
    let mut same = 0usize;
    for s in &structural {
        let m = softmax.iter().find(|m| m.image_index == s.image_index)?;
        same += usize::from(m.predicted == s.predicted);
    }
    Some(same as f64 / structural.len() as f64)
}

/// Largest `|M - L - D|` over the rows.
pub fn identity_violation(rows: &[DecompositionRow]) -> f64 {
    rows.iter().map(|r| (r.energy_margin - r.logsoftmax_margin - r.residual).abs()).fold(0.0, f64::max)
}

/// Correlation of the residual and of the log-softmax margin with
/// structural correctness, over the rows of one (epoch, sigma) cell.
pub fn margin_correlations(rows: &[DecompositionRow], epoch: usize, sigma: f64) -> Option<(usize, f64, f64)> {
    let cell: Vec<&DecompositionRow> = rows.iter().filter(|r| r.epoch == epoch && r.sigma == sigma).collect();
    let correct: Vec<f64> = cell.iter().map(|r| f64::from(u8::from(r.structural_correct))).collect();
    let d: Vec<f64> = cell.iter().map(|r| r.residual).collect();
    let l: Vec<f64> = cell.iter().map(|r| r.logsoftmax_margin).collect();
    Some((cell.len(), pearson(&d, &correct).ok()?, pearson(&l, &correct).ok()?))
}

/// `(path, sha256)` of every checkpoint listed in a manifest.
pub fn checkpoint_digests(m: &Manifest) -> Vec<(String, String)> {
    m.files.iter().filter(|f| f.path.starts_with("checkpoints/")).map(|f| (f.path.clone(), f.sha256.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, probe: &str, sigma: Option<f64>, i: usize, predicted: usize) -> ProbeRecordRow {
        ProbeRecordRow { epoch, sigma, image_index: i, probe: probe.into(), predicted, margin: 0.0, correct: true }
    }

    #[test]
    fn adjacent_increase() {
        assert_eq!(max_adjacent_increase(&[0.8, 0.8, 0.7, 0.5]), 0.0);
        assert!((max_adjacent_increase(&[0.8, 0.7, 0.75, 0.5]) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn agreement_pairs_by_image() {
        let records = vec![
            rec(1, "structural", Some(0.0), 0, 3),
            rec(1, "structural", Some(0.0), 1, 4),
            rec(1, "structural", Some(0.1), 0, 9),
            rec(1, "softmax", None, 1, 4),
            rec(1, "softmax", None, 0, 2),
        ];
        assert_eq!(argmax_agreement(&records, 1, 0.0), Some(0.5));
        assert_eq!(argmax_agreement(&records, 2, 0.0), None);
    }

    #[test]
    fn identity_and_correlation() {
        let rows: Vec<DecompositionRow> = (0..20)
            .map(|i| {
                let l = i as f64 / 10.0;
                DecompositionRow {
                    epoch: 1,
                    sigma: 0.0,
                    image_index: i,
                    first: 0,
                    second: 1,
                    energy_margin: l + 0.5,
                    logsoftmax_margin: l,
                    residual: 0.5,
                    structural_correct: i >= 10,
                    softmax_correct: true,
                    softmax_ranked_margin: None,
                }
            })
            .collect();
        assert!(identity_violation(&rows) < 1e-12);
        // constant residual has no defined correlation
        assert!(margin_correlations(&rows, 1, 0.0).is_none());
        let mut varied = rows.clone();
        for (i, r) in varied.iter_mut().enumerate() {
            r.residual = if i % 2 == 0 { 0.1 } else { 0.9 };
            r.energy_margin = r.logsoftmax_margin + r.residual;
        }
        let (n, d, l) = margin_correlations(&varied, 1, 0.0).unwrap();
        assert_eq!(n, 20);
        assert!(d.abs() < 0.15 && l > 0.8);
    }
}
