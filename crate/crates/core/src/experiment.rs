//! Monte Carlo sweeps over anchor and malicious rates, with CSV and
//! gnuplot-style output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{CanonicalWriter, Digest};
use crate::netsim::{run_localization, ConfigError, Mode, RunResult, SimConfig, SimError};

pub const CSV_HEADER: &str = "anchor_rate,malicious_rate,mode,mean_error_m,stddev_m,mean_localized,mean_rejected";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<ConfigError> for ExperimentError {
    fn from(e: ConfigError) -> Self {
        ExperimentError::Sim(SimError::Config(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub base: SimConfig,
    pub anchor_rates: Vec<f64>,
    pub malicious_rates: Vec<f64>,
    pub modes: Vec<Mode>,
    pub runs_per_cell: u32,
    pub base_seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            base: SimConfig::default(),
            anchor_rates: vec![0.2, 0.5],
            malicious_rates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            modes: vec![Mode::Insecure, Mode::Secure],
            runs_per_cell: 10,
            base_seed: 1,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs_per_cell == 0 {
            return Err(ExperimentError::Plan("runs_per_cell must be at least 1".into()));
        }
        if self.anchor_rates.is_empty() || self.malicious_rates.is_empty() || self.modes.is_empty() {
            return Err(ExperimentError::Plan("rate and mode lists must be non-empty".into()));
        }
        for cell in self.cells() {
            self.config_for(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Every (anchor_rate, malicious_rate, mode) combination, in plan order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &anchor_rate in &self.anchor_rates {
            for &malicious_rate in &self.malicious_rates {
                for &mode in &self.modes {
                    cells.push(Cell { anchor_rate, malicious_rate, mode });
                }
            }
        }
        cells
    }

    pub fn config_for(&self, cell: &Cell, run_index: u32) -> SimConfig {
        SimConfig {
            anchor_rate: cell.anchor_rate,
            malicious_rate: cell.malicious_rate,
            mode: cell.mode,
            seed: derive_seed(self.base_seed, cell.anchor_rate, cell.malicious_rate, run_index),
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub anchor_rate: f64,
    pub malicious_rate: f64,
    pub mode: Mode,
}

/// Per-run seed. The mode is deliberately absent so secure and insecure runs
/// of the same cell share topology and behavior assignment.
pub fn derive_seed(base_seed: u64, anchor_rate: f64, malicious_rate: f64, run_index: u32) -> u64 {
    let mut w = CanonicalWriter::new();
    w.u64(base_seed).u64(anchor_rate.to_bits()).u64(malicious_rate.to_bits()).u64(u64::from(run_index));
    let d = Digest::of(&w.finish());
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub anchor_rate: f64,
    pub malicious_rate: f64,
    pub mode: Mode,
    pub mean_over_runs: f64,
    pub stddev_over_runs: f64,
    pub mean_localized: f64,
    pub mean_rejected: f64,
    /// The runs behind the aggregates; empty when parsed back from CSV.
    pub runs: Vec<RunResult>,
}

impl CellResult {
    pub fn aggregate(cell: Cell, runs: Vec<RunResult>) -> CellResult {
        let errors: Vec<f64> = runs.iter().map(|r| r.mean_error).filter(|e| e.is_finite()).collect();
        let (mean, stddev) = mean_and_stddev(&errors);
        let n = runs.len().max(1) as f64;
        CellResult {
            anchor_rate: cell.anchor_rate,
            malicious_rate: cell.malicious_rate,
            mode: cell.mode,
            mean_over_runs: mean,
            stddev_over_runs: stddev,
            mean_localized: runs.iter().map(|r| r.localized_count as f64).sum::<f64>() / n,
            mean_rejected: runs.iter().map(|r| r.rejected_claims as f64).sum::<f64>() / n,
            runs,
        }
    }

    fn sort_key(&self) -> (f64, f64, Mode) {
        (self.anchor_rate, self.malicious_rate, self.mode)
    }
}

/// Arithmetic mean and sample standard deviation (0 for fewer than two values,
/// NaN mean for none).
pub fn mean_and_stddev(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every cell of the plan. Runs execute in parallel; results come back in plan order.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<CellResult>, ExperimentError> {
    plan.validate()?;
    let cells = plan.cells();
    let jobs: Vec<(usize, u32)> = (0..cells.len()).flat_map(|c| (0..plan.runs_per_cell).map(move |r| (c, r))).collect();
    let runs: Vec<RunResult> =
        jobs.par_iter().map(|&(c, r)| run_localization(&plan.config_for(&cells[c], r))).collect::<Result<_, _>>()?;

    let per_cell = plan.runs_per_cell as usize;
    let mut runs = runs.into_iter();
    Ok(cells.into_iter().map(|cell| CellResult::aggregate(cell, runs.by_ref().take(per_cell).collect())).collect())
}

/// Caps the worker pool used by [`run_experiment`]. Must run before the first experiment.
pub fn set_threads(n: usize) -> Result<(), ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ExperimentError::Plan(format!("thread pool: {e}")))
}

fn sorted(results: &[CellResult]) -> Vec<&CellResult> {
    let mut rows: Vec<&CellResult> = results.iter().collect();
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
    });
    rows
}

pub fn format_csv(results: &[CellResult]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in sorted(results) {
        let _ = writeln!(
            out,
            "{:.2},{:.2},{},{:.4},{:.4},{:.2},{:.2}",
            r.anchor_rate,
            r.malicious_rate,
            r.mode.as_str(),
            r.mean_over_runs,
            r.stddev_over_runs,
            r.mean_localized,
            r.mean_rejected
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<CellResult>, ExperimentError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => return Err(ExperimentError::Parse { line: 1, message: "missing or unexpected header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let err = |message: String| ExperimentError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        out.push(CellResult {
            anchor_rate: num(fields[0])?,
            malicious_rate: num(fields[1])?,
            mode: fields[2].parse().map_err(err)?,
            mean_over_runs: num(fields[3])?,
            stddev_over_runs: num(fields[4])?,
            mean_localized: num(fields[5])?,
            mean_rejected: num(fields[6])?,
            runs: Vec::new(),
        });
    }
    Ok(out)
}

pub fn format_plot_data(results: &[CellResult]) -> Result<String, ExperimentError> {
    let rows = sorted(results);
    let mut malicious: Vec<f64> = rows.iter().map(|r| r.malicious_rate).collect();
    malicious.dedup();
    malicious.sort_by(f64::total_cmp);
    malicious.dedup();
    if malicious.len() < 2 {
        return Err(ExperimentError::Plan("plot data needs at least two malicious rates".into()));
    }

    let mut series: Vec<((f64, Mode), Vec<&CellResult>)> = Vec::new();
    for r in rows {
        let key = (r.anchor_rate, r.mode);
        match series.iter_mut().find(|(k, _)| k.0.to_bits() == key.0.to_bits() && k.1 == key.1) {
            Some((_, points)) => points.push(r),
            None => series.push((key, vec![r])),
        }
    }
    series.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.cmp(&b.0 .1)));

    let mut out = String::new();
    for (i, ((anchor_rate, mode), mut points)) in series.into_iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        points.sort_by(|a, b| a.malicious_rate.total_cmp(&b.malicious_rate));
        let _ = writeln!(out, "# series: anchor_rate={anchor_rate:.2} mode={}", mode.as_str());
        out.push_str("# malicious_rate mean_error_m stddev_m\n");
        for p in points {
            let _ = writeln!(out, "{:.2} {:.4} {:.4}", p.malicious_rate, p.mean_over_runs, p.stddev_over_runs);
        }
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

pub fn emit_csv(results: &[CellResult], path: &Path) -> Result<(), ExperimentError> {
    if results.is_empty() {
        return Err(ExperimentError::Plan("no results to write".into()));
    }
    write_file(path, &format_csv(results))
}

pub fn emit_plot_data(results: &[CellResult], path: &Path) -> Result<(), ExperimentError> {
    write_file(path, &format_plot_data(results)?)
}
