//! Executes one condition end to end and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use pcnprobe_core::audit::{decompose, noop_report};
use pcnprobe_core::data::{load_cifar10, synth_dataset, Dataset, Split, SynthSpec};
use pcnprobe_core::engine::{
    train_decoder_posthoc, train_epoch_bp, train_epoch_pc, LossWeights, PcMode, PcTrainConfig, SettleConfig,
};
use pcnprobe_core::metrics::MetricsReport;
use pcnprobe_core::model::{Checkpoint, Module, PcnModel};
use pcnprobe_core::numerics::ops::BnMode;
use pcnprobe_core::numerics::{OptimizerConfig, OptimizerState};
use pcnprobe_core::probes::{evaluate_probes, softmax_record, ProbeKind, ProbeRecord};

use crate::config::{Condition, DataSource, ExperimentConfig};
use crate::error::{io_err, CliError, Result};
use crate::output::*;

/// Mixed into the run seed for evaluation-time Langevin noise.
const EVAL_NOISE_SALT: u64 = 0x6576_616c;

/// Everything a finished run produced, also present on disk.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub results: Vec<ResultRow>,
    pub probe_records: Vec<ProbeRecordRow>,
    pub decomposition: Vec<DecompositionRow>,
    pub noop: Option<NoopFile>,
    pub manifest: Manifest,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    phases: Vec<PhaseTiming>,
    data: Option<DataSummary>,
    results: Vec<ResultRow>,
    probe_records: Vec<ProbeRecordRow>,
    decomposition: Vec<DecompositionRow>,
    noop: Vec<NoopEntry>,
}

impl<'a> Run<'a> {
    fn timed<R>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        let start = Instant::now();
        let r = f(self);
        let secs = start.elapsed().as_secs_f64();
        match self.phases.iter_mut().find(|p| p.phase == phase) {
            Some(p) => p.seconds += secs,
            None => self.phases.push(PhaseTiming { phase: phase.to_string(), seconds: secs }),
        }
        r
    }

    fn out(&self) -> &Path {
        &self.cfg.run.out
    }

    fn settle_config(&self, sigma: f64) -> SettleConfig {
        let i = &self.cfg.inference;
        SettleConfig { momentum: i.momentum, ..SettleConfig::new(i.steps, i.lr).with_sigma(sigma) }
    }

    fn optimizer(&self) -> OptimizerState<f32> {
        OptimizerState::new(OptimizerConfig::adamw(self.cfg.training.weight_lr, self.cfg.training.weight_decay))
    }

    fn load_data(&mut self) -> Result<(Dataset, Dataset)> {
        let cfg = self.cfg;
        let n_train = cfg.train_images();
        let n_eval = cfg.eval.images;
        let (train, eval) = match cfg.data.source {
            DataSource::Cifar10 => {
                let dir = cfg.dataset_path().expect("validated");
                let train = load_cifar10(&dir, Split::Train)?;
                let train = if n_train < train.len() { train.head(n_train)? } else { train };
                let eval = load_cifar10(&dir, Split::Test)?;
                let eval = eval.eval_subset(n_eval.min(eval.len()))?;
                (train, eval)
            }
            DataSource::Synthetic => {
                let spec = SynthSpec::default_for(10);
                let train = synth_dataset(10, n_train, spec, cfg.run.seed, Split::Train)?;
                let eval = synth_dataset(10, n_eval.div_ceil(10) * 10, spec, cfg.run.seed, Split::Test)?.head(n_eval)?;
                (train, eval)
            }
        };
        info!("data: {} training and {} evaluation images ({:?})", train.len(), eval.len(), train.provenance);
        self.data = Some(DataSummary {
            provenance: format!("{:?}", train.provenance).to_lowercase(),
            train_images: train.len(),
            eval_images: eval.len(),
        });
        Ok((train, eval))
    }

    fn save_checkpoint(&self, epoch: usize, model: &PcnModel<f32>, optim: &[(&str, &OptimizerState<f32>, Vec<String>)]) -> Result<()> {
        let dir = self.out().join(CHECKPOINT_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut ck = Checkpoint::new();
        ck.add_module("model.", model);
        for (key, state, names) in optim {
            ck.add_optimizer(key, names, state);
        }
        ck.save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        Ok(())
    }

    fn push_result(&mut self, epoch: usize, probe: ProbeKind, sigma: Option<f64>, records: &[ProbeRecord]) -> Result<()> {
        let m = MetricsReport::from_records(records)?;
        info!(
            "epoch {epoch} {} sigma {:?}: accuracy {:.4}, auroc2 {:?}",
            probe.as_str(),
            sigma,
            m.accuracy,
            m.auroc2
        );
        self.results.push(ResultRow {
            condition: self.cfg.run.condition.as_str().to_string(),
            epoch,
            probe: probe.as_str().to_string(),
            sigma,
            n_eval: m.n,
            accuracy: m.accuracy,
            auroc2: m.auroc2,
            seed: self.cfg.run.seed,
        });
        self.probe_records.extend(records.iter().map(|r| ProbeRecordRow::new(epoch, sigma, r)));
        Ok(())
    }

    /// Probe evaluation at one checkpoint: a structural row per sigma plus one softmax row.
    fn evaluate(&mut self, epoch: usize, model: &PcnModel<f32>, eval: &Dataset) -> Result<()> {
        let cfg = self.cfg;
        if !cfg.run.condition.has_chain() {
            let mut records = Vec::with_capacity(eval.len());
            for start in (0..eval.len()).step_by(cfg.eval.batch_size) {
                let idx: Vec<usize> = (start..(start + cfg.eval.batch_size).min(eval.len())).collect();
                let (x, labels) = eval.batch(&idx);
                let logits = model.encoder.forward(&x, BnMode::Eval)?.z[3].clone();
                records.extend(labels.iter().enumerate().map(|(j, &y)| softmax_record(start + j, logits.item(j), y)));
            }
            return self.push_result(epoch, ProbeKind::Softmax, None, &records);
        }
        let seed = cfg.run.seed ^ EVAL_NOISE_SALT;
        for (s, &sigma) in cfg.eval.sigmas.iter().enumerate() {
            let ev = evaluate_probes(model, eval, &self.settle_config(sigma), seed, cfg.eval.batch_size)?;
            self.push_result(epoch, ProbeKind::Structural, Some(sigma), &ev.structural)?;
            if s == 0 {
                self.push_result(epoch, ProbeKind::Softmax, None, &ev.softmax)?;
            }
            for (r, logits) in ev.structural.iter().zip(&ev.logits) {
                let d = decompose(r.image_index, &r.scores, logits, eval.labels[r.image_index], cfg.eval.verbose)?;
                self.decomposition.push(DecompositionRow::new(epoch, sigma, &d));
            }
        }
        Ok(())
    }

    fn diagnose(&mut self, epoch: usize, model: &PcnModel<f32>, eval: &Dataset) -> Result<()> {
        let report = noop_report(model, eval, &self.settle_config(0.0), self.cfg.eval.batch_size)?;
        info!(
            "no-op diagnostic at epoch {epoch}: mean |dh| {:?}, relative energy decrease {:.3e}",
            report.mean_abs_delta, report.relative_energy_decrease
        );
        self.noop.push(NoopEntry { epoch, report });
        Ok(())
    }

    fn execute(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let (train, eval) = self.timed("load_data", |r| r.load_data())?;
        let mut model = PcnModel::<f32>::init(cfg.run.seed);
        let mut optim = self.optimizer();
        let t = &cfg.training;
        match cfg.run.condition {
            c if c.is_pc() => {
                let mode = match c {
                    Condition::C6Mcpc => PcMode::Mcpc { samples: t.mcpc_samples },
                    _ => PcMode::FinalState,
                };
                let pc = PcTrainConfig {
                    settle: self.settle_config(cfg.inference.sigma_train),
                    mode,
                    weights: LossWeights::default(),
                    batch_size: t.batch_size,
                    seed: cfg.run.seed,
                };
                let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
                if t.epochs == 0 {
                    self.timed("evaluate", |r| r.evaluate(0, &model, &eval))?;
                }
                for epoch in 1..=t.epochs {
                    let stats = self.timed("train", |_| Ok(train_epoch_pc(&mut model, &mut optim, &train, &pc, epoch - 1)?))?;
                    info!(
                        "epoch {epoch}: readout {:.4}, generative {:.4}, train accuracy {:.4}",
                        stats.readout_loss, stats.generative_loss, stats.train_accuracy
                    );
                    if t.checkpoint_epochs.contains(&epoch) {
                        self.timed("write", |r| r.save_checkpoint(epoch, &model, &[("weights", &optim, names.clone())]))?;
                        self.timed("evaluate", |r| r.evaluate(epoch, &model, &eval))?;
                    }
                }
            }
            Condition::C4Bp => {
                let names: Vec<String> = Module::named_params(&model.encoder).into_iter().map(|(n, _)| n).collect();
                for epoch in 1..=t.epochs {
                    let stats = self.timed("train", |_| {
                        Ok(train_epoch_bp(&mut model.encoder, &mut optim, &train, t.batch_size, cfg.run.seed, epoch - 1)?)
                    })?;
                    info!("epoch {epoch}: loss {:.4}, train accuracy {:.4}", stats.readout_loss, stats.train_accuracy);
                    if t.checkpoint_epochs.contains(&epoch) {
                        self.timed("write", |r| r.save_checkpoint(epoch, &model, &[("encoder", &optim, names.clone())]))?;
                        self.timed("evaluate", |r| r.evaluate(epoch, &model, &eval))?;
                    }
                }
            }
            Condition::C3BpDecoder => {
                for epoch in 0..t.epochs {
                    let stats = self.timed("train", |_| {
                        Ok(train_epoch_bp(&mut model.encoder, &mut optim, &train, t.batch_size, cfg.run.seed, epoch)?)
                    })?;
                    info!("encoder epoch {}: loss {:.4}", epoch + 1, stats.readout_loss);
                }
                let mut dec_optim = self.optimizer();
                for epoch in 0..t.decoder_epochs {
                    let stats = self.timed("train", |_| {
                        let (enc, dec) = (&model.encoder, &mut model.chain);
                        Ok(train_decoder_posthoc(enc, dec, &mut dec_optim, &train, t.batch_size, cfg.run.seed, epoch)?)
                    })?;
                    info!("decoder epoch {}: reconstruction {:.5}", epoch + 1, stats.generative_loss);
                }
                let enc_names: Vec<String> = Module::named_params(&model.encoder).into_iter().map(|(n, _)| n).collect();
                let dec_names: Vec<String> = Module::named_params(&model.chain).into_iter().map(|(n, _)| n).collect();
                let epoch = t.epochs;
                self.timed("write", |r| {
                    r.save_checkpoint(epoch, &model, &[("encoder", &optim, enc_names), ("decoder", &dec_optim, dec_names)])
                })?;
                self.timed("evaluate", |r| r.evaluate(epoch, &model, &eval))?;
            }
            _ => unreachable!("every condition is handled"),
        }
        if cfg.run.condition.has_chain() {
            self.timed("diagnose", |r| r.diagnose(t.epochs, &model, &eval))?;
        }
        Ok(())
    }

    fn write_tables(&self) -> Result<()> {
        let out = self.out();
        write_csv(
            &out.join(RESULTS_CSV),
            &self.results,
            &["condition", "epoch", "probe", "sigma", "n_eval", "accuracy", "auroc2", "seed"],
        )?;
        write_csv(
            &out.join(PROBE_RECORDS_CSV),
            &self.probe_records,
            &["epoch", "sigma", "image_index", "probe", "predicted", "margin", "correct"],
        )?;
        if self.cfg.run.condition.has_chain() {
            write_csv(&out.join(DECOMPOSITION_CSV), &self.decomposition, &[])?;
            let noop = NoopFile { condition: self.cfg.run.condition.as_str().to_string(), reports: self.noop.clone() };
            write_json(&out.join(NOOP_JSON), &noop)?;
        }
        Ok(())
    }
}

/// Runs `cfg` into `cfg.run.out`. On failure a manifest with the cause is
/// still written (when the directory exists) and the error is returned.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.run.out.clone();
    if out.join(MANIFEST_JSON).exists() {
        return Err(CliError::Config(format!("{} already holds a run", out.display())));
    }
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    fs::write(out.join(CONFIG_TOML), cfg.to_toml()).map_err(io_err(&out))?;
    info!("running {} at {:?} scale into {}", cfg.run.condition, cfg.run.scale, out.display());

    let mut run = Run {
        cfg,
        phases: Vec::new(),
        data: None,
        results: Vec::new(),
        probe_records: Vec::new(),
        decomposition: Vec::new(),
        noop: Vec::new(),
    };
    let status = run.execute().and_then(|_| run.timed("write", |r| r.write_tables()));
    let mut manifest = Manifest {
        status: "ok".into(),
        failure: None,
        code_version: code_version(),
        config: cfg.clone(),
        data: run.data.clone(),
        phases: run.phases.clone(),
        files: Vec::new(),
    };
    if let Err(e) = &status {
        manifest.status = "failed".into();
        manifest.failure = Some(e.to_string());
    }
    manifest.files = inventory(&out)?;
    write_json(&out.join(MANIFEST_JSON), &manifest)?;
    status?;
    Ok(RunOutcome {
        out,
        results: run.results,
        probe_records: run.probe_records,
        decomposition: run.decomposition,
        noop: cfg.run.condition.has_chain().then(|| NoopFile {
            condition: cfg.run.condition.as_str().to_string(),
            reports: run.noop,
        }),
        manifest,
    })
}

/// Rebuilds a model from a checkpoint written by [`run`].
pub fn load_model(path: &Path) -> Result<PcnModel<f32>> {
    let ck = Checkpoint::<f32>::load(path)?;
    let mut model = PcnModel::<f32>::init(0);
    ck.load_module("model.", &mut model)?;
    Ok(model)
}

/// No-op diagnostic of an existing checkpoint on the evaluation images;
/// writes `noop.json` and a manifest into `cfg.run.out`.
pub fn diagnose_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<NoopFile> {
    cfg.validate()?;
    let out = cfg.run.out.clone();
    if out.join(MANIFEST_JSON).exists() {
        return Err(CliError::Config(format!("{} already holds a run", out.display())));
    }
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut run = Run {
        cfg,
        phases: Vec::new(),
        data: None,
        results: Vec::new(),
        probe_records: Vec::new(),
        decomposition: Vec::new(),
        noop: Vec::new(),
    };
    let status = (|| {
        let model = load_model(checkpoint)?;
        let (_, eval) = run.timed("load_data", |r| r.load_data())?;
        run.timed("diagnose", |r| r.diagnose(0, &model, &eval))?;
        let noop = NoopFile { condition: cfg.run.condition.as_str().to_string(), reports: run.noop.clone() };
        write_json(&out.join(NOOP_JSON), &noop)?;
        Ok(noop)
    })();
    let manifest = Manifest {
        status: if status.is_ok() { "ok" } else { "failed" }.into(),
        failure: status.as_ref().err().map(|e: &CliError| e.to_string()),
        code_version: code_version(),
        config: cfg.clone(),
        data: run.data.clone(),
        phases: run.phases.clone(),
        files: inventory(&out)?,
    };
    write_json(&out.join(MANIFEST_JSON), &manifest)?;
    status
}
