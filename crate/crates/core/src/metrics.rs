//! Type-2 metrics over probe records.

use serde::{Deserialize, Serialize};

use crate::error::{PcnError, Result};
use crate::probes::ProbeRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    /// `None` when every record is correct or every record is incorrect.
    pub auroc2: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

impl MetricsReport {
    pub fn from_records(records: &[ProbeRecord]) -> Result<Self> {
        let accuracy = accuracy(records)?;
        let n_correct = records.iter().filter(|r| r.correct).count();
        let auroc2 = match auroc2(records) {
            Ok(v) => Some(v),
            Err(PcnError::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { n: records.len(), accuracy, auroc2, n_correct, n_incorrect: records.len() - n_correct })
    }
}

pub fn accuracy(records: &[ProbeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(PcnError::InvalidArgument("accuracy of an empty record set".into()));
    }
    Ok(records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
}

/// AUROC2 of the records' margins against their correctness flags.
pub fn auroc2(records: &[ProbeRecord]) -> Result<f64> {
    let margins: Vec<f64> = records.iter().map(|r| r.margin).collect();
    let correct: Vec<bool> = records.iter().map(|r| r.correct).collect();
    auroc2_scores(&margins, &correct)
}

/// Probability that a positive outranks a negative, ties counting one half.
///
/// Rank-sum form: after sorting, tied groups get their average rank and
/// `U = sum(pos ranks) - P(P+1)/2`. Ranks are integers or halves, so `U` is
/// exact in f64 for any realistic `n`.
pub fn auroc2_scores(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(PcnError::InvalidArgument(format!("{} scores but {} labels", scores.len(), positive.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(PcnError::NonFinite { what: "confidence margin".into(), index: i });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PcnError::Undefined(format!("AUROC2 needs both classes ({n_pos} correct, {n_neg} incorrect)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(PcnError::InvalidArgument(format!("pearson: {} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(PcnError::InvalidArgument("pearson needs at least 3 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PcnError::Undefined("pearson: zero variance".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(PcnError::NonFinite { what: "pearson coefficient".into(), index: 0 });
    }
    Ok(r.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_record_example() {
        let a = auroc2_scores(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn separation_and_ties() {
        assert_eq!(auroc2_scores(&[3.0, 2.0, 1.0, 0.0], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc2_scores(&[1.0; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_is_undefined() {
        assert!(matches!(auroc2_scores(&[1.0, 2.0], &[true, true]), Err(PcnError::Undefined(_))));
        assert!(matches!(auroc2_scores(&[], &[]), Err(PcnError::Undefined(_))));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-9);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-9);
        assert!(matches!(pearson(&xs, &[2.0; 5]), Err(PcnError::Undefined(_))));
    }
}
