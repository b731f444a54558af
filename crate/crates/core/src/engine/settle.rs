use serde::{Deserialize, Serialize};

use super::energy::{breakdown_from_errors, prediction_errors, EnergyBreakdown};
use crate::error::{PcnError, Result};
use crate::model::Latents;
use crate::model::{GenerativeChain, PcnModel};
use crate::numerics::ops::{cross_entropy_backward, BnMode};
use crate::numerics::{Float, RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettleConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Langevin noise standard deviation; 0 is deterministic.
    pub sigma: f64,
    pub telemetry: bool,
    /// Number of final states to return (MCPC samples); 0 keeps none.
    pub keep_last: usize,
}

impl SettleConfig {
    pub fn new(steps: usize, lr: f64) -> Self {
        Self { steps, lr, momentum: 0.5, sigma: 0.0, telemetry: false, keep_last: 0 }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// Current latents, the frozen feedforward initialisation and clamp flags.
#[derive(Clone, Debug)]
pub struct LatentState<T = f32> {
    pub z: Latents<T>,
    ff: Latents<T>,
    pub clamped: [bool; 4],
    /// One-hot targets `[N, K]` for the CE term.
    pub target: Tensor<T>,
}

impl<T: Float> LatentState<T> {
    /// Initialises from feedforward latents; with `clamp_top`, `z4` is set to
    /// the target and held fixed.
    pub fn from_feedforward(ff: Latents<T>, target: Tensor<T>, clamp_top: bool) -> Result<Self> {
        ff.check_shapes()?;
        target.same_shape(&ff.z[3], "settle target")?;
        let mut z = ff.clone();
        if clamp_top {
            z.z[3] = target.clone();
        }
        Ok(Self { z, ff, clamped: [false, false, false, clamp_top], target })
    }

    pub fn ff(&self) -> &Latents<T> {
        &self.ff
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SettleTelemetry {
    /// Mean |z_T - z_ff| per layer.
    pub mean_abs_delta: [f64; 4],
    /// Mean |∇_z E| per layer, averaged over steps.
    pub mean_abs_grad: [f64; 4],
    pub energy_initial: f64,
    pub energy_final: f64,
    /// mean((z_T - z_ff)^2) per layer.
    pub mse_vs_ff: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct SettleOutput<T = f32> {
    pub energy_initial: Vec<EnergyBreakdown>,
    pub energy_final: Vec<EnergyBreakdown>,
    pub telemetry: Option<SettleTelemetry>,
    /// States after each of the last `keep_last` steps, oldest first.
    pub samples: Vec<Latents<T>>,
}

/// Scales every item of `t` by `1 / item_len`.
fn per_item_mean_grad<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let s = T::lit(1.0 / t.item_len() as f64);
    t.map(|v| v * s)
}

fn check_energies(e: &[EnergyBreakdown], step: usize) -> Result<()> {
    match e.iter().position(|b| !b.total.is_finite()) {
        None => Ok(()),
        Some(i) => Err(PcnError::NonFinite { what: format!("energy at settle step {step}"), index: i }),
    }
}

/// Latent gradients of the per-sample energy; `None` for clamped layers.
fn latent_grads<T: Float>(
    chain: &GenerativeChain<T>,
    state: &LatentState<T>,
    errors: &[Tensor<T>; 3],
) -> Result<[Option<Tensor<T>>; 4]> {
    let s: [Tensor<T>; 3] = [0, 1, 2].map(|l| per_item_mean_grad(&errors[l]));
    let c = state.clamped;
    let g1 = (!c[0]).then(|| s[0].clone());
    let g2 = if c[1] { None } else { Some(s[1].sub(&chain.backward_input(1, &s[0])?)?) };
    let g3 = if c[2] { None } else { Some(s[2].sub(&chain.backward_input(2, &s[1])?)?) };
    let g4 = if c[3] {
        None
    } else {
        let ce = cross_entropy_backward(&state.z.z[3], &state.target, 1.0)?;
        Some(ce.sub(&chain.backward_input(3, &s[2])?)?)
    };
    Ok([g1, g2, g3, g4])
}

/// Runs `cfg.steps` steps of momentum SGD on the unclamped latents.
///
/// Momentum buffers start at zero. With `sigma > 0`, `sigma * N(0, 1)` is
/// added to every unclamped element after each step, drawn from `rngs[i]`
/// for batch item `i`.
pub fn settle<T: Float>(
    chain: &GenerativeChain<T>,
    state: &mut LatentState<T>,
    cfg: &SettleConfig,
    mut rngs: Option<&mut [RngStream]>,
) -> Result<SettleOutput<T>> {
    let n = state.z.batch();
    if cfg.keep_last > cfg.steps {
        return Err(PcnError::InvalidArgument(format!(
            "cannot keep {} samples from {} settle steps",
            cfg.keep_last, cfg.steps
        )));
    }
    if cfg.sigma > 0.0 {
        match &rngs {
            Some(r) if r.len() == n => {}
            _ => return Err(PcnError::InvalidArgument(format!("Langevin settle needs {n} noise streams"))),
        }
    }
    let (mu, lr) = (T::lit(cfg.momentum), T::lit(cfg.lr));
    let mut bufs: [Option<Tensor<T>>; 4] =
        [0, 1, 2, 3].map(|l| (!state.clamped[l]).then(|| Tensor::zeros(state.z.z[l].shape())));
    let mut grad_acc = [0.0f64; 4];
    let mut samples = Vec::with_capacity(cfg.keep_last);
    let mut energy_initial = Vec::new();
    let mut scratch: Vec<T> = Vec::new();
    for t in 0..=cfg.steps {
        let errors = prediction_errors(chain, &state.z)?;
        if t == cfg.steps {
            let e = breakdown_from_errors(&errors, &state.z.z[3], &state.target)?;
            check_energies(&e, t)?;
            if t == 0 {
                energy_initial = e.clone();
            }
            let telemetry = cfg.telemetry.then(|| {
                let mut tel = SettleTelemetry {
                    energy_initial: EnergyBreakdown::mean(&energy_initial).total,
                    energy_final: EnergyBreakdown::mean(&e).total,
                    ..Default::default()
                };
                for l in 0..4 {
                    let (zl, fl) = (state.z.z[l].data(), state.ff.z[l].data());
                    let len = zl.len().max(1) as f64;
                    tel.mean_abs_delta[l] = zl.iter().zip(fl).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum::<f64>() / len;
                    tel.mse_vs_ff[l] = zl.iter().zip(fl).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / len;
                    if cfg.steps > 0 {
                        tel.mean_abs_grad[l] = grad_acc[l] / cfg.steps as f64;
                    }
                }
                tel
            });
            return Ok(SettleOutput { energy_initial, energy_final: e, telemetry, samples });
        }
        if t == 0 {
            energy_initial = breakdown_from_errors(&errors, &state.z.z[3], &state.target)?;
            check_energies(&energy_initial, 0)?;
        }
        let grads = latent_grads(chain, state, &errors)?;
        for l in 0..4 {
            let (Some(g), Some(buf)) = (&grads[l], &mut bufs[l]) else { continue };
            if cfg.telemetry {
                grad_acc[l] += g.mean_abs();
            }
            for ((b, &gv), z) in buf.data_mut().iter_mut().zip(g.data()).zip(state.z.z[l].data_mut()) {
                *b = mu * *b + gv;
                *z -= lr * *b;
            }
        }
        if cfg.sigma > 0.0 {
            let rngs = rngs.as_deref_mut().expect("checked above");
            for (i, rng) in rngs.iter_mut().enumerate() {
                for l in 0..4 {
                    if state.clamped[l] {
                        continue;
                    }
                    let item = state.z.z[l].item_mut(i);
                    scratch.resize(item.len(), T::zero());
                    rng.fill_normal(&mut scratch, cfg.sigma);
                    item.iter_mut().zip(&scratch).for_each(|(z, e)| *z += *e);
                }
            }
        }
        if t + 1 > cfg.steps - cfg.keep_last {
            samples.push(state.z.clone());
        }
    }
    unreachable!("loop returns at t == steps")
}

/// Feedforward initialisation (BN eval mode) followed by a settle with `z4`
/// clamped to `targets`.
pub fn settle_from_input<T: Float>(
    model: &PcnModel<T>,
    x: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &SettleConfig,
    rngs: Option<&mut [RngStream]>,
) -> Result<(LatentState<T>, SettleOutput<T>)> {
    let ff = model.encoder.forward(x, BnMode::Eval)?;
    let mut state = LatentState::from_feedforward(ff, targets.clone(), true)?;
    let out = settle(&model.chain, &mut state, cfg, rngs)?;
    Ok((state, out))
}
