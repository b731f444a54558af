//! Gap table across finished runs: structural minus softmax AUROC2 at each
//! run's last evaluated epoch.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::{read_csv, ResultRow, RESULTS_CSV};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub condition: String,
    pub epoch: usize,
    pub sigma: Option<f64>,
    pub structural_auroc2: Option<f64>,
    pub softmax_auroc2: Option<f64>,
    pub delta: Option<f64>,
}

/// Summary rows of one run directory.
pub fn summarize_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join(RESULTS_CSV);
    if !path.exists() {
        return Err(CliError::Summary(format!("{}: missing {RESULTS_CSV}", dir.display())));
    }
    let rows: Vec<ResultRow> =
        read_csv(&path).map_err(|e| CliError::Summary(format!("{}: unreadable {RESULTS_CSV} ({e})", dir.display())))?;
    let epoch = rows
        .iter()
        .map(|r| r.epoch)
        .max()
        .ok_or_else(|| CliError::Summary(format!("{}: {RESULTS_CSV} has no rows", dir.display())))?;
    let last: Vec<&ResultRow> = rows.iter().filter(|r| r.epoch == epoch).collect();
    let softmax = last.iter().find(|r| r.probe == "softmax").and_then(|r| r.auroc2);
    let run = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    let mut out: Vec<SummaryRow> = last
        .iter()
        .filter(|r| r.probe == "structural")
        .map(|r| SummaryRow {
            run: run.clone(),
            condition: r.condition.clone(),
            epoch,
            sigma: r.sigma,
            structural_auroc2: r.auroc2,
            softmax_auroc2: softmax,
            delta: r.auroc2.zip(softmax).map(|(s, m)| s - m),
        })
        .collect();
    if out.is_empty() {
        // softmax-only runs (c4) still get a row
        let cond = last[0].condition.clone();
        out.push(SummaryRow {
            run,
            condition: cond,
            epoch,
            sigma: None,
            structural_auroc2: None,
            softmax_auroc2: softmax,
            delta: None,
        });
    }
    Ok(out)
}

/// Summarises every directory; failures are collected per directory
/// instead of aborting the rest.
pub fn summarize(dirs: &[PathBuf]) -> (Vec<SummaryRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for d in dirs {
        match summarize_dir(d) {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(e.to_string()),
        }
    }
    (rows, errors)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "NA".into())
}

pub fn to_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Summary(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Aligned text table with Δ rounded to three decimals.
pub fn to_table(rows: &[SummaryRow]) -> String {
    let header = ["run", "condition", "epoch", "sigma", "structural", "softmax", "delta"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.run.clone(),
                r.condition.clone(),
                r.epoch.to_string(),
                r.sigma.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                opt(r.structural_auroc2, 4),
                opt(r.softmax_auroc2, 4),
                opt(r.delta, 3),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, c: &[String]| {
        let parts: Vec<String> = c
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (s, w))| if i < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    for c in &cells {
        line(&mut out, c);
    }
    out
}
