use super::energy::energy_per_sample;
use super::settle::{settle, LatentState, SettleConfig};
use crate::error::Result;
use crate::model::{GenerativeChain, Latents, PcnModel};
use crate::numerics::ops::{one_hot, BnMode};
use crate::numerics::{Float, RngStream, Tensor};

const KWAY_NOISE_STREAM: u64 = 0x6b77_6179;
/// Rows (image, hypothesis pairs) settled together.
const CHUNK_ROWS: usize = 320;

/// Noise stream for hypothesis `k` of the image at global index `image`;
/// independent of how images are batched.
pub fn hypothesis_stream(seed: u64, image: usize, k: usize, num_classes: usize) -> RngStream {
    RngStream::with_stream(seed, KWAY_NOISE_STREAM).derive((image * num_classes + k) as u64)
}

/// Settled total energy for every image and every clamped class, `[N][K]`.
///
/// Each hypothesis starts from the same feedforward latents with fresh
/// momentum buffers. `first_index` is the global index of the first image
/// (it keys the noise streams).
///
/// Without noise the settle map is affine in `(z_ff, z4)` because the
/// generative chain is affine and the clamped CE term has no latent
/// gradient. The settled state for hypothesis k is then the bias-free settle
/// of `z_ff` with `z4 = 0` plus the image-independent settle of zero latents
/// with `z4 = e_k`, which costs one settle per image instead of K.
pub fn kway_from_feedforward<T: Float>(
    chain: &GenerativeChain<T>,
    ff: &Latents<T>,
    num_classes: usize,
    cfg: &SettleConfig,
    noise_seed: u64,
    first_index: usize,
) -> Result<Vec<Vec<f64>>> {
    if cfg.sigma > 0.0 {
        kway_direct(chain, ff, num_classes, cfg, noise_seed, first_index)
    } else {
        kway_superposed(chain, ff, num_classes, cfg)
    }
}

fn kway_superposed<T: Float>(
    chain: &GenerativeChain<T>,
    ff: &Latents<T>,
    num_classes: usize,
    cfg: &SettleConfig,
) -> Result<Vec<Vec<f64>>> {
    let settle_cfg = SettleConfig { telemetry: false, keep_last: 0, ..*cfg };
    let hyp = one_hot::<T>(&(0..num_classes).collect::<Vec<_>>(), num_classes)?;
    let mut particular = LatentState::from_feedforward(Latents::zeros(num_classes), hyp, true)?;
    settle(chain, &mut particular, &settle_cfg, None)?;

    let mut linear = chain.clone();
    linear.g3.bias.fill(T::zero());
    linear.g2.bias.fill(T::zero());
    linear.g1.bias.fill(T::zero());

    let n = ff.batch();
    let per_chunk = (CHUNK_ROWS / num_classes).max(1);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + per_chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = ff.select_items(&idx);
        let zero_top = Tensor::zeros(chunk.z[3].shape());
        let mut homogeneous = LatentState::from_feedforward(chunk, zero_top, true)?;
        settle(&linear, &mut homogeneous, &settle_cfg, None)?;
        let mut rows = homogeneous.z.repeat_items(num_classes);
        for l in 0..3 {
            let p = particular.z.z[l].data();
            let width = particular.z.z[l].item_len();
            for (r, item) in rows.z[l].data_mut().chunks_exact_mut(width).enumerate() {
                let k = r % num_classes;
                item.iter_mut().zip(&p[k * width..(k + 1) * width]).for_each(|(z, v)| *z += *v);
            }
        }
        let labels: Vec<usize> = (start..end).flat_map(|_| 0..num_classes).collect();
        let target = one_hot::<T>(&labels, num_classes)?;
        rows.z[3] = target.clone();
        let e = energy_per_sample(chain, &rows, &target)?;
        for row in e.chunks(num_classes) {
            out.push(row.iter().map(|b| b.total).collect());
        }
        start = end;
    }
    Ok(out)
}

/// One settle per (image, hypothesis) row; used whenever noise is on.
pub fn kway_direct<T: Float>(
    chain: &GenerativeChain<T>,
    ff: &Latents<T>,
    num_classes: usize,
    cfg: &SettleConfig,
    noise_seed: u64,
    first_index: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = ff.batch();
    let per_chunk = (CHUNK_ROWS / num_classes).max(1);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + per_chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let rows = ff.select_items(&idx).repeat_items(num_classes);
        let labels: Vec<usize> = (start..end).flat_map(|_| 0..num_classes).collect();
        let target = one_hot::<T>(&labels, num_classes)?;
        let mut state = LatentState::from_feedforward(rows, target, true)?;
        let settle_cfg = SettleConfig { telemetry: false, keep_last: 0, ..*cfg };
        let result = if cfg.sigma > 0.0 {
            let mut rngs: Vec<RngStream> = (start..end)
                .flat_map(|i| (0..num_classes).map(move |k| (i, k)))
                .map(|(i, k)| hypothesis_stream(noise_seed, first_index + i, k, num_classes))
                .collect();
            settle(chain, &mut state, &settle_cfg, Some(&mut rngs))?
        } else {
            settle(chain, &mut state, &settle_cfg, None)?
        };
        for row in result.energy_final.chunks(num_classes) {
            out.push(row.iter().map(|e| e.total).collect());
        }
        start = end;
    }
    Ok(out)
}

/// Encoder forward (BN eval) then [`kway_from_feedforward`].
pub fn kway_settle_energies<T: Float>(
    model: &PcnModel<T>,
    x: &Tensor<T>,
    num_classes: usize,
    cfg: &SettleConfig,
    noise_seed: u64,
    first_index: usize,
) -> Result<Vec<Vec<f64>>> {
    let ff = model.encoder.forward(x, BnMode::Eval)?;
    kway_from_feedforward(&model.chain, &ff, num_classes, cfg, noise_seed, first_index)
}
