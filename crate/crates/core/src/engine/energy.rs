use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{GenerativeChain, Latents};
use crate::numerics::ops::{cross_entropy, mean_of_squares};
use crate::numerics::{Float, Tensor};

/// Energy split into the three halved mean-squared prediction errors and the
/// cross-entropy of `z4` against the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub layer_terms: [f64; 3],
    pub ce_term: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(layer_terms: [f64; 3], ce_term: f64) -> Self {
        Self { layer_terms, ce_term, total: layer_terms.iter().sum::<f64>() + ce_term }
    }

    pub fn mean(items: &[Self]) -> Self {
        let n = items.len().max(1) as f64;
        let mut layers = [0.0; 3];
        let mut ce = 0.0;
        for e in items {
            for l in 0..3 {
                layers[l] += e.layer_terms[l];
            }
            ce += e.ce_term;
        }
        Self::new(layers.map(|v| v / n), ce / n)
    }
}

/// `ε_l = z_l - g_l(z_{l+1})` for l = 1, 2, 3 (index 0..3).
pub fn prediction_errors<T: Float>(chain: &GenerativeChain<T>, z: &Latents<T>) -> Result<[Tensor<T>; 3]> {
    z.check_shapes()?;
    let e1 = z.z[0].sub(&chain.predict(1, &z.z[1])?)?;
    let e2 = z.z[1].sub(&chain.predict(2, &z.z[2])?)?;
    let e3 = z.z[2].sub(&chain.predict(3, &z.z[3])?)?;
    Ok([e1, e2, e3])
}

/// Per-sample breakdowns from precomputed prediction errors.
pub fn breakdown_from_errors<T: Float>(
    errors: &[Tensor<T>; 3],
    z4: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<Vec<EnergyBreakdown>> {
    let ce = cross_entropy(z4, targets)?;
    Ok((0..z4.batch())
        .map(|i| {
            let layers = [0, 1, 2].map(|l| 0.5 * mean_of_squares(errors[l].item(i)));
            EnergyBreakdown::new(layers, ce[i])
        })
        .collect())
}

/// Energy of every batch item.
pub fn energy_per_sample<T: Float>(
    chain: &GenerativeChain<T>,
    z: &Latents<T>,
    targets: &Tensor<T>,
) -> Result<Vec<EnergyBreakdown>> {
    let errors = prediction_errors(chain, z)?;
    breakdown_from_errors(&errors, &z.z[3], targets)
}

/// Batch-mean energy.
pub fn energy<T: Float>(chain: &GenerativeChain<T>, z: &Latents<T>, targets: &Tensor<T>) -> Result<EnergyBreakdown> {
    Ok(EnergyBreakdown::mean(&energy_per_sample(chain, z, targets)?))
}
