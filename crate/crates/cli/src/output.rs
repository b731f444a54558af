//! On-disk artifacts of a run: CSV tables, JSON reports and the manifest.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use pcnprobe_core::audit::{DecompositionRecord, NoopReport};
use pcnprobe_core::probes::ProbeRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{io_err, Result};

pub const RESULTS_CSV: &str = "results.csv";
pub const PROBE_RECORDS_CSV: &str = "probe_records.csv";
pub const DECOMPOSITION_CSV: &str = "decomposition.csv";
pub const NOOP_JSON: &str = "noop.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One (checkpoint, probe, sigma) cell. `sigma` is empty for softmax rows
/// and `auroc2` is empty when every image is correct (or none is).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: String,
    pub epoch: usize,
    pub probe: String,
    pub sigma: Option<f64>,
    pub n_eval: usize,
    pub accuracy: f64,
    pub auroc2: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecordRow {
    pub epoch: usize,
    pub sigma: Option<f64>,
    pub image_index: usize,
    pub probe: String,
    pub predicted: usize,
    pub margin: f64,
    pub correct: bool,
}

impl ProbeRecordRow {
    pub fn new(epoch: usize, sigma: Option<f64>, r: &ProbeRecord) -> Self {
        Self {
            epoch,
            sigma,
            image_index: r.image_index,
            probe: r.probe.as_str().to_string(),
            predicted: r.predicted,
            margin: r.margin,
            correct: r.correct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub epoch: usize,
    pub sigma: f64,
    pub image_index: usize,
    pub first: usize,
    pub second: usize,
    pub energy_margin: f64,
    pub logsoftmax_margin: f64,
    pub residual: f64,
    pub structural_correct: bool,
    pub softmax_correct: bool,
    pub softmax_ranked_margin: Option<f64>,
}

impl DecompositionRow {
    pub fn new(epoch: usize, sigma: f64, r: &DecompositionRecord) -> Self {
        Self {
            epoch,
            sigma,
            image_index: r.image_index,
            first: r.first,
            second: r.second,
            energy_margin: r.energy_margin,
            logsoftmax_margin: r.logsoftmax_margin,
            residual: r.residual,
            structural_correct: r.structural_correct,
            softmax_correct: r.softmax_correct,
            softmax_ranked_margin: r.softmax_ranked_margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoopEntry {
    pub epoch: usize,
    #[serde(flatten)]
    pub report: NoopReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoopFile {
    pub condition: String,
    pub reports: Vec<NoopEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub provenance: String,
    pub train_images: usize,
    pub eval_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `ok` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub code_version: String,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    pub phases: Vec<PhaseTiming>,
    pub files: Vec<FileDigest>,
}

pub fn code_version() -> String {
    format!("pcnprobe {}", env!("CARGO_PKG_VERSION"))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        total += n as u64;
    }
    Ok((total, format!("{:x}", h.finalize())))
}

/// Digests of every regular file under `root` except the manifest, sorted by path.
pub fn inventory(root: &Path) -> Result<Vec<FileDigest>> {
    let mut paths = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let p = entry.map_err(io_err(&dir))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != MANIFEST_JSON) {
                paths.push(p);
            }
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let (bytes, sha256) = sha256_file(&p)?;
            let rel: PathBuf = p.strip_prefix(root).unwrap_or(&p).to_path_buf();
            Ok(FileDigest { path: rel.to_string_lossy().replace('\\', "/"), bytes, sha256 })
        })
        .collect()
}
