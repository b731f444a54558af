//! Experiment configuration: condition presets, scale factors, TOML files
//! and command-line overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable consulted when no dataset path is given.
pub const DATASET_ENV: &str = "PCNPROBE_CIFAR10_DIR";

/// Eval-time noise levels of the Langevin sweep.
pub const SIGMA_SWEEP: [f64; 5] = [0.0, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "c1-det-pc")]
    C1DetPc,
    #[serde(rename = "c2-diagnose")]
    C2Diagnose,
    #[serde(rename = "c3-bp-decoder")]
    C3BpDecoder,
    #[serde(rename = "c4-bp")]
    C4Bp,
    #[serde(rename = "c5-langevin")]
    C5Langevin,
    #[serde(rename = "c6-mcpc")]
    C6Mcpc,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::C1DetPc,
        Condition::C2Diagnose,
        Condition::C3BpDecoder,
        Condition::C4Bp,
        Condition::C5Langevin,
        Condition::C6Mcpc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::C1DetPc => "c1-det-pc",
            Condition::C2Diagnose => "c2-diagnose",
            Condition::C3BpDecoder => "c3-bp-decoder",
            Condition::C4Bp => "c4-bp",
            Condition::C5Langevin => "c5-langevin",
            Condition::C6Mcpc => "c6-mcpc",
        }
    }

    /// Trained with the PC objective (as opposed to backprop).
    pub fn is_pc(self) -> bool {
        matches!(self, Condition::C1DetPc | Condition::C2Diagnose | Condition::C5Langevin | Condition::C6Mcpc)
    }

    /// Has a generative chain, so the structural probe applies.
    pub fn has_chain(self) -> bool {
        self != Condition::C4Bp
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = CliError;

    /// Accepts the full name or its `cN` prefix.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s || c.as_str().split('-').next() == Some(s.as_str()))
            .ok_or_else(|| CliError::Config(format!("unknown condition '{s}'")))
    }
}

/// How much of the full protocol to run.
///
/// | scale | train images | eval images | epochs (c1/c2/c4, c3 enc+dec, c5/c6) |
/// |-------|--------------|-------------|--------------------------------------|
/// | full  | all 50,000   | 1280        | 25, 5+5, 10                          |
/// | desk  | 5,000        | 1280 (512 for c5/c6) | 3, 5+5, 2                   |
/// | ci    | 500          | 200 (100 for c5/c6)  | 1, 1+1, 1                   |
///
/// c5/c6 evaluate fewer images because every noisy K-way point needs one
/// full settle per image and hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Desk,
    Ci,
}

impl FromStr for Scale {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            "ci" => Ok(Scale::Ci),
            other => Err(CliError::Config(format!("unknown scale '{other}' (full, desk or ci)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Cifar10,
    Synthetic,
}

impl FromStr for DataSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" | "cifar" => Ok(DataSource::Cifar10),
            "synthetic" | "synth" => Ok(DataSource::Synthetic),
            other => Err(CliError::Config(format!("unknown dataset '{other}' (cifar10 or synthetic)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub condition: Condition,
    pub scale: Scale,
    pub seed: u64,
    pub deterministic: bool,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// CIFAR-10 directory; falls back to the environment variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Leading training records to use; absent means the whole split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    /// Synthetic training-set size when `train_subset` is absent.
    pub synthetic_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub sigma_train: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    /// Post-hoc decoder epochs (c3 only).
    pub decoder_epochs: usize,
    pub batch_size: usize,
    pub weight_lr: f64,
    pub weight_decay: f64,
    /// Kept Langevin samples per weight update (c6 only).
    pub mcpc_samples: usize,
    pub checkpoint_epochs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub sigmas: Vec<f64>,
    pub images: usize,
    pub batch_size: usize,
    /// Adds the softmax-ranked margin to decomposition.csv.
    pub verbose: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub inference: InferenceSection,
    pub training: TrainingSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    /// Full-scale defaults of a condition.
    pub fn preset(condition: Condition) -> Self {
        use Condition::*;
        let langevin = matches!(condition, C5Langevin | C6Mcpc);
        let epochs = match condition {
            C1DetPc | C2Diagnose | C4Bp => 25,
            C3BpDecoder => 5,
            C5Langevin | C6Mcpc => 10,
        };
        let checkpoint_epochs = match condition {
            C1DetPc | C4Bp => vec![5, 10, 15, 20, 25],
            _ => vec![epochs],
        };
        let sigmas = match condition {
            C4Bp => vec![],
            C5Langevin => SIGMA_SWEEP.to_vec(),
            C6Mcpc => vec![0.0, 1e-2],
            _ => vec![0.0],
        };
        Self {
            run: RunSection {
                condition,
                scale: Scale::Full,
                seed: 42,
                deterministic: true,
                out: PathBuf::from("runs").join(condition.as_str()),
            },
            data: DataSection { source: DataSource::Cifar10, path: None, train_subset: None, synthetic_train: 50_000 },
            inference: InferenceSection {
                steps: if langevin { 50 } else { 13 },
                lr: if langevin { 1e-2 } else { 5e-2 },
                momentum: 0.5,
                sigma_train: if langevin { 1e-2 } else { 0.0 },
            },
            training: TrainingSection {
                epochs,
                decoder_epochs: if condition == C3BpDecoder { 5 } else { 0 },
                batch_size: 128,
                weight_lr: 1e-4,
                weight_decay: 1e-4,
                mcpc_samples: if condition == C6Mcpc { 10 } else { 0 },
                checkpoint_epochs,
            },
            eval: EvalSection { sigmas, images: 1280, batch_size: 128, verbose: false },
        }
    }

    /// Preset of `condition` rescaled to `scale`.
    pub fn preset_at(condition: Condition, scale: Scale) -> Self {
        let mut c = Self::preset(condition);
        c.apply_scale(scale);
        c
    }

    /// Rewrites epochs, checkpoints and data sizes for `scale` (see [`Scale`]).
    pub fn apply_scale(&mut self, scale: Scale) {
        use Condition::*;
        let cond = self.run.condition;
        let noisy = matches!(cond, C5Langevin | C6Mcpc);
        self.run.scale = scale;
        let (subset, images, epochs, decoder_epochs) = match scale {
            Scale::Full => {
                let full = Self::preset(cond);
                (None, 1280, full.training.epochs, full.training.decoder_epochs)
            }
            Scale::Desk => {
                let e = match cond {
                    C1DetPc | C2Diagnose | C4Bp => 3,
                    C3BpDecoder => 5,
                    C5Langevin | C6Mcpc => 2,
                };
                (Some(5_000), if noisy { 512 } else { 1280 }, e, if cond == C3BpDecoder { 5 } else { 0 })
            }
            Scale::Ci => (Some(500), if noisy { 100 } else { 200 }, 1, if cond == C3BpDecoder { 1 } else { 0 }),
        };
        self.data.train_subset = subset;
        self.data.synthetic_train = subset.unwrap_or(50_000);
        self.eval.images = images;
        self.training.decoder_epochs = decoder_epochs;
        self.training.checkpoint_epochs = match cond {
            C1DetPc | C4Bp if scale == Scale::Full => vec![5, 10, 15, 20, 25],
            C1DetPc | C4Bp => (1..=epochs).collect(),
            _ => vec![epochs],
        };
        self.training.epochs = epochs;
    }

    /// Changes the epoch count, keeping checkpoints that still fit and
    /// always checkpointing the final epoch.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.training.epochs = epochs;
        self.training.checkpoint_epochs.retain(|&e| e <= epochs && e > 0);
        if epochs > 0 && !self.training.checkpoint_epochs.contains(&epochs) {
            self.training.checkpoint_epochs.push(epochs);
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// Dataset directory from the config or the environment.
    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.data.path.clone().or_else(|| std::env::var_os(DATASET_ENV).map(PathBuf::from))
    }

    /// Rejects inconsistent settings before any work is done.
    pub fn validate(&self) -> Result<()> {
        use Condition::*;
        let bad = |m: String| Err(CliError::Config(m));
        let c = self.run.condition;
        let t = &self.training;
        let inf = &self.inference;
        if t.batch_size == 0 || self.eval.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.eval.images == 0 && c != C2Diagnose {
            return bad("eval.images must be positive".into());
        }
        if c != C2Diagnose && t.epochs == 0 {
            return bad(format!("{c} needs at least one training epoch"));
        }
        if let Some(&e) = t.checkpoint_epochs.iter().find(|&&e| e == 0 || e > t.epochs) {
            return bad(format!("checkpoint epoch {e} is outside 1..={}", t.epochs));
        }
        if t.checkpoint_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoint_epochs must be strictly increasing".into());
        }
        if !(t.weight_lr >= 0.0 && t.weight_decay >= 0.0 && inf.lr >= 0.0 && (0.0..1.0).contains(&inf.momentum)) {
            return bad("learning rates and weight decay must be non-negative, momentum in [0, 1)".into());
        }
        if !(inf.sigma_train >= 0.0) || self.eval.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise levels must be finite and non-negative".into());
        }
        match c {
            C4Bp if !self.eval.sigmas.is_empty() => {
                return bad("c4-bp has no generative chain; eval sigmas do not apply".into())
            }
            C1DetPc | C3BpDecoder | C5Langevin | C6Mcpc if self.eval.sigmas.is_empty() => {
                return bad(format!("{c} needs at least one eval sigma"))
            }
            C1DetPc | C2Diagnose if inf.sigma_train != 0.0 => {
                return bad(format!("{c} trains deterministically; sigma_train must be 0"))
            }
            C3BpDecoder if t.decoder_epochs == 0 => return bad("c3-bp-decoder needs decoder_epochs > 0".into()),
            C6Mcpc if t.mcpc_samples == 0 || t.mcpc_samples > inf.steps => {
                return bad(format!("mcpc_samples must be in 1..={} (the inference steps)", inf.steps))
            }
            _ => {}
        }
        if c != C6Mcpc && t.mcpc_samples != 0 {
            return bad("mcpc_samples only applies to c6-mcpc".into());
        }
        if c.is_pc() && inf.steps == 0 {
            return bad("PC training needs at least one inference step".into());
        }
        if self.data.source == DataSource::Cifar10 && self.dataset_path().is_none() {
            return bad(format!("CIFAR-10 needs --dataset-path or {DATASET_ENV}"));
        }
        if self.data.source == DataSource::Synthetic && self.train_images() % 10 != 0 {
            return bad("synthetic training-set size must be a multiple of 10".into());
        }
        Ok(())
    }

    /// Training images actually used.
    pub fn train_images(&self) -> usize {
        match self.data.source {
            DataSource::Synthetic => self.data.train_subset.unwrap_or(self.data.synthetic_train),
            DataSource::Cifar10 => self.data.train_subset.unwrap_or(50_000),
        }
    }
}

/// Values given on the command line; `None` keeps the file or preset value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub condition: Option<Condition>,
    pub scale: Option<Scale>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub dataset: Option<DataSource>,
    pub dataset_path: Option<PathBuf>,
    pub subset: Option<usize>,
    pub eval_images: Option<usize>,
    pub eval_sigmas: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    pub verbose: bool,
}

/// Parses a comma-separated list of noise levels such as `0,1e-3,0.1`.
pub fn parse_sigma_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad sigma '{p}'"))))
        .collect()
}

/// Resolution order: preset, scale, config file, flags.
pub fn resolve(file: Option<&str>, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match file {
        Some(text) => {
            let mut c = ExperimentConfig::from_toml(text)?;
            if let Some(cond) = o.condition {
                if cond != c.run.condition {
                    return Err(CliError::Config(format!(
                        "--condition {cond} conflicts with the config file's {}",
                        c.run.condition
                    )));
                }
            }
            if let Some(s) = o.scale {
                c.apply_scale(s);
            }
            c
        }
        None => {
            let cond = o.condition.ok_or_else(|| CliError::Config("--condition or --config is required".into()))?;
            ExperimentConfig::preset_at(cond, o.scale.unwrap_or(Scale::Full))
        }
    };
    if let Some(e) = o.epochs {
        cfg.set_epochs(e);
    }
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(d) = o.dataset {
        cfg.data.source = d;
    }
    if let Some(p) = &o.dataset_path {
        cfg.data.path = Some(p.clone());
        if o.dataset.is_none() {
            cfg.data.source = DataSource::Cifar10;
        }
    }
    if let Some(n) = o.subset {
        cfg.data.train_subset = Some(n);
    }
    if let Some(n) = o.eval_images {
        cfg.eval.images = n;
    }
    if let Some(s) = &o.eval_sigmas {
        cfg.eval.sigmas = s.clone();
    }
    if let Some(p) = &o.out {
        cfg.run.out = p.clone();
    }
    cfg.run.deterministic |= o.deterministic;
    cfg.eval.verbose |= o.verbose;
    cfg.validate()?;
    Ok(cfg)
}
