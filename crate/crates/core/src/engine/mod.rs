//! Energy, inference (settle) loop, K-way energies and training loops.

pub mod energy;
pub mod kway;
pub mod settle;
pub mod train;

pub use energy::{energy, energy_per_sample, prediction_errors, EnergyBreakdown};
pub use kway::{hypothesis_stream, kway_direct, kway_from_feedforward, kway_settle_energies};
pub use settle::{settle, settle_from_input, LatentState, SettleConfig, SettleOutput, SettleTelemetry};
pub use train::{
    apply_gradients, batch_noise_streams, bp_batch_gradients, decoder_batch_gradients, pc_batch_gradients,
    train_decoder_posthoc, train_epoch_bp, train_epoch_pc, EpochStats, LossWeights, PcMode, PcTrainConfig,
};
