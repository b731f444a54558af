use serde::{Deserialize, Serialize};

use super::energy::{prediction_errors, EnergyBreakdown};
use super::settle::{settle, LatentState, SettleConfig};
use crate::data::{batches, epoch_order, Dataset};
use crate::error::{PcnError, Result};
use crate::model::{DecoderModel, Encoder, Latents, Module, PcnModel, NUM_CLASSES};
use crate::numerics::ops::{cross_entropy, cross_entropy_backward, mean_of_squares, one_hot, BnMode};
use crate::numerics::{Float, OptimizerState, RngStream, Tensor};

const TRAIN_NOISE_STREAM: u64 = 0x7472_6169;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PcMode {
    /// Weight gradients at the final settled state.
    FinalState,
    /// Weight gradients averaged over the states after the last `samples` steps.
    Mcpc { samples: usize },
}

/// Weights of the three terms of the PC weight objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Layer terms of the energy at the settled latents (trains the chain).
    pub generative: f64,
    /// MSE between encoder outputs z1..z3 and the settled latents (held constant).
    pub alignment: f64,
    /// CE of the feedforward logits against the label.
    pub readout: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { generative: 1.0, alignment: 1.0, readout: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcTrainConfig {
    pub settle: SettleConfig,
    pub mode: PcMode,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub seed: u64,
}

/// Mean losses over an epoch (or a single batch).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub batches: usize,
    pub images: usize,
    /// CE of the feedforward logits.
    pub readout_loss: f64,
    /// Sum of the energy's layer terms at the settled latents.
    pub generative_loss: f64,
    pub alignment_loss: f64,
    /// Batch-mean settle energy before and after the inference loop.
    pub energy_initial: f64,
    pub energy_final: f64,
    /// Feedforward training accuracy.
    pub train_accuracy: f64,
}

impl EpochStats {
    fn accumulate(&mut self, b: &EpochStats) {
        let w = b.images as f64;
        self.readout_loss += b.readout_loss * w;
        self.generative_loss += b.generative_loss * w;
        self.alignment_loss += b.alignment_loss * w;
        self.energy_initial += b.energy_initial * w;
        self.energy_final += b.energy_final * w;
        self.train_accuracy += b.train_accuracy * w;
        self.images += b.images;
        self.batches += 1;
    }

    fn finish(mut self) -> Self {
        let n = self.images.max(1) as f64;
        self.readout_loss /= n;
        self.generative_loss /= n;
        self.alignment_loss /= n;
        self.energy_initial /= n;
        self.energy_final /= n;
        self.train_accuracy /= n;
        self
    }
}

fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy_of<T: Float>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let hits = labels.iter().enumerate().filter(|(i, &y)| argmax(logits.item(*i)) == y).count();
    hits as f64 / labels.len().max(1) as f64
}

fn finite(v: f64, what: &str, batch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PcnError::NonFinite { what: format!("{what} (batch index)"), index: batch })
    }
}

/// Applies one optimiser step using gradients stored in a model of the same type.
pub fn apply_gradients<T: Float, M: Module<T>>(model: &mut M, grads: &M, optim: &mut OptimizerState<T>) -> Result<()> {
    let g: Vec<&Tensor<T>> = grads.named_params().into_iter().map(|(_, t)| t).collect();
    let mut p = model.params_mut();
    optim.step(&mut p, &g)
}

/// Noise streams for one training batch, one per item.
pub fn batch_noise_streams(seed: u64, epoch: usize, batch: usize, n: usize) -> Vec<RngStream> {
    let base = RngStream::with_stream(seed, TRAIN_NOISE_STREAM).derive(((epoch as u64) << 32) | batch as u64);
    (0..n).map(|i| base.derive(i as u64)).collect()
}

/// Weight gradients of the PC objective for one batch.
///
/// The encoder runs in BN train mode; the settle clamps `z4` to the labels.
/// Settled latents are constants for the weight update (no backprop through
/// the inference loop).
pub fn pc_batch_gradients<T: Float>(
    model: &PcnModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &PcTrainConfig,
    rngs: Option<&mut [RngStream]>,
) -> Result<(PcnModel<T>, EpochStats, crate::model::EncoderCache<T>)> {
    let n = labels.len();
    let cache = model.encoder.forward_cached(x, BnMode::Train)?;
    let ff = cache.ff.clone();
    let target = one_hot::<T>(labels, NUM_CLASSES)?;
    let mut state = LatentState::from_feedforward(ff.clone(), target.clone(), true)?;
    let keep = match cfg.mode {
        PcMode::FinalState => 1,
        PcMode::Mcpc { samples } => samples,
    };
    if keep == 0 {
        return Err(PcnError::InvalidArgument("MCPC needs at least one sample".into()));
    }
    let settle_cfg = SettleConfig { keep_last: if cfg.settle.steps == 0 { 0 } else { keep }, ..cfg.settle };
    let out = settle(&model.chain, &mut state, &settle_cfg, rngs)?;
    let samples: Vec<Latents<T>> = if out.samples.is_empty() { vec![state.z.clone()] } else { out.samples };
    let m = samples.len() as f64;

    let mut grads = model.zeros_like();
    let mut gen_loss = 0.0;
    let mut align_loss = 0.0;
    let mut align_grads: [Tensor<T>; 3] = [0, 1, 2].map(|l| Tensor::zeros(ff.z[l].shape()));
    for z in &samples {
        let errors = prediction_errors(&model.chain, z)?;
        for l in 0..3 {
            let d = errors[l].item_len() as f64;
            gen_loss += (0..n).map(|i| 0.5 * mean_of_squares(errors[l].item(i))).sum::<f64>() / (n as f64 * m);
            // d/dĝ of ½·mean(ε²) averaged over batch and samples
            let scale = T::lit(-cfg.weights.generative / (d * n as f64 * m));
            let g_pred = errors[l].map(|e| e * scale);
            model.chain.backward_params(l + 1, &z.z[l + 1], &g_pred, &mut grads.chain)?;

            let diff = ff.z[l].sub(&z.z[l])?;
            align_loss += mean_of_squares(diff.data()) / m;
            let s = T::lit(2.0 * cfg.weights.alignment / (diff.len() as f64 * m));
            align_grads[l].axpy(s, &diff)?;
        }
    }
    let readout = cross_entropy(&ff.z[3], &target)?.iter().sum::<f64>() / n as f64;
    let g4 = cross_entropy_backward(&ff.z[3], &target, cfg.weights.readout / n as f64)?;
    model.encoder.backward(
        &cache,
        [Some(&align_grads[0]), Some(&align_grads[1]), Some(&align_grads[2]), Some(&g4)],
        &mut grads.encoder,
    )?;
    let stats = EpochStats {
        batches: 1,
        images: n,
        readout_loss: readout,
        generative_loss: gen_loss,
        alignment_loss: align_loss,
        energy_initial: EnergyBreakdown::mean(&out.energy_initial).total,
        energy_final: EnergyBreakdown::mean(&out.energy_final).total,
        train_accuracy: accuracy_of(&ff.z[3], labels),
    };
    Ok((grads, stats, cache))
}

/// One epoch of PC training with AdamW (or whatever `optim` holds).
pub fn train_epoch_pc<T: Float>(
    model: &mut PcnModel<T>,
    optim: &mut OptimizerState<T>,
    data: &Dataset,
    cfg: &PcTrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let mut total = EpochStats::default();
    let order = epoch_order(data.len(), cfg.seed, epoch);
    for (b, idx) in batches(&order, cfg.batch_size).iter().enumerate() {
        let (x, labels) = data.batch(idx);
        let x = x.cast::<T>();
        let mut rngs = batch_noise_streams(cfg.seed, epoch, b, idx.len());
        let noise = (cfg.settle.sigma > 0.0).then_some(rngs.as_mut_slice());
        let (grads, stats, cache) = pc_batch_gradients(model, &x, &labels, cfg, noise)?;
        for v in [stats.readout_loss, stats.generative_loss, stats.alignment_loss] {
            finite(v, "training loss", b)?;
        }
        apply_gradients(model, &grads, optim)?;
        model.encoder.update_running_stats(&cache);
        total.accumulate(&stats);
    }
    Ok(total.finish())
}

/// Cross-entropy gradients for the encoder alone.
pub fn bp_batch_gradients<T: Float>(
    encoder: &Encoder<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Encoder<T>, EpochStats, crate::model::EncoderCache<T>)> {
    let n = labels.len();
    let cache = encoder.forward_cached(x, BnMode::Train)?;
    let target = one_hot::<T>(labels, NUM_CLASSES)?;
    let loss = cross_entropy(&cache.ff.z[3], &target)?.iter().sum::<f64>() / n as f64;
    let g4 = cross_entropy_backward(&cache.ff.z[3], &target, 1.0 / n as f64)?;
    let mut grads = encoder.zeros_like();
    encoder.backward(&cache, [None, None, None, Some(&g4)], &mut grads)?;
    let stats = EpochStats {
        batches: 1,
        images: n,
        readout_loss: loss,
        train_accuracy: accuracy_of(&cache.ff.z[3], labels),
        ..Default::default()
    };
    Ok((grads, stats, cache))
}

/// One epoch of standard backprop training of the encoder.
pub fn train_epoch_bp<T: Float>(
    encoder: &mut Encoder<T>,
    optim: &mut OptimizerState<T>,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    let mut total = EpochStats::default();
    let order = epoch_order(data.len(), seed, epoch);
    for (b, idx) in batches(&order, batch_size).iter().enumerate() {
        let (x, labels) = data.batch(idx);
        let (grads, stats, cache) = bp_batch_gradients(encoder, &x.cast::<T>(), &labels)?;
        finite(stats.readout_loss, "training loss", b)?;
        apply_gradients(encoder, &grads, optim)?;
        encoder.update_running_stats(&cache);
        total.accumulate(&stats);
    }
    Ok(total.finish())
}

/// Teacher-forced reconstruction gradients for a decoder on frozen
/// (BN eval mode) encoder activations: `Σ_l mean((z_l^ff - g_l(z_{l+1}^ff))^2)`.
pub fn decoder_batch_gradients<T: Float>(
    encoder: &Encoder<T>,
    decoder: &DecoderModel<T>,
    x: &Tensor<T>,
) -> Result<(DecoderModel<T>, f64)> {
    let ff = encoder.forward(x, BnMode::Eval)?;
    let errors = prediction_errors(decoder, &ff)?;
    let mut grads = decoder.zeros_like();
    let mut loss = 0.0;
    for l in 0..3 {
        loss += mean_of_squares(errors[l].data());
        let s = T::lit(-2.0 / errors[l].len() as f64);
        decoder.backward_params(l + 1, &ff.z[l + 1], &errors[l].map(|e| e * s), &mut grads)?;
    }
    Ok((grads, loss))
}

/// One epoch of post-hoc decoder training; the encoder is never modified.
pub fn train_decoder_posthoc<T: Float>(
    encoder: &Encoder<T>,
    decoder: &mut DecoderModel<T>,
    optim: &mut OptimizerState<T>,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    let mut total = EpochStats::default();
    let order = epoch_order(data.len(), seed ^ 0xdec0de, epoch);
    for (b, idx) in batches(&order, batch_size).iter().enumerate() {
        let (x, _) = data.batch(idx);
        let (grads, loss) = decoder_batch_gradients(encoder, decoder, &x.cast::<T>())?;
        finite(loss, "decoder loss", b)?;
        apply_gradients(decoder, &grads, optim)?;
        total.accumulate(&EpochStats { batches: 1, images: idx.len(), generative_loss: loss, ..Default::default() });
    }
    Ok(total.finish())
}
