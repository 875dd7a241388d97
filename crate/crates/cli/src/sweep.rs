//! Cartesian sweeps over scheme, budget/fidelity, train size and seed.
//!
//! ```text
//! <out>/grid.toml              the grid as read
//! <out>/cells/<cell>/data/     that cell's dataset
//! <out>/cells/<cell>/...       a regular run directory
//! <out>/sweep.csv              cell, train_size, then the metrics columns
//! <out>/cells.csv              one status row per cell
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use femlab::samplers::SchemeSpec;
use femlab::seqmodel::TaskShape;
use femlab::taskgen::{generate_dataset, write_dataset_dir};
use femlab::trainer::{InitSpec, MetricsRecord, TrainConfig, CSV_COLUMNS};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::failure::usage;
use crate::run::{train_run, METRICS_JSONL};

pub const DEFAULT_SEEDS: [u64; 3] = [257, 521, 1031];
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CELLS_CSV: &str = "cells.csv";

/// The `--grid` file. `schemes` entries are either complete scheme strings
/// (`rs:3`, `pps:0.1`, `exact`) or bare kinds: `rs` expands over `budgets`,
/// `pps` and `star` over `fidelities`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub schemes: Vec<String>,
    pub budgets: Vec<u32>,
    pub fidelities: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
    pub vocab: usize,
    pub question_len: usize,
    pub max_len: usize,
    pub variable_length: bool,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub shuffle_updates: bool,
    pub freeze_grad_point: bool,
    pub init: String,
}

impl Default for GridConfig {
    fn default() -> Self {
        let shape = TaskShape::default();
        let t = TrainConfig::default();
        Self {
            schemes: Vec::new(),
            budgets: Vec::new(),
            fidelities: Vec::new(),
            train_sizes: vec![2000],
            seeds: DEFAULT_SEEDS.to_vec(),
            test_size: 2000,
            vocab: shape.vocab,
            question_len: shape.question_len,
            max_len: shape.max_len,
            variable_length: shape.variable_length,
            iterations: t.iterations,
            lr_start: t.lr_start,
            lr_end: t.lr_end,
            shuffle_updates: t.shuffle_updates,
            freeze_grad_point: t.freeze_grad_point,
            init: InitSpec::default().to_string(),
        }
    }
}

/// `cell`, `train_size`, then the per-run metrics columns.
pub fn sweep_columns() -> Vec<&'static str> {
    let mut cols = vec!["cell", "train_size"];
    cols.extend(CSV_COLUMNS);
    cols
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub scheme: SchemeSpec,
    pub train_size: usize,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_n{}_s{}", self.scheme.to_string().replace(':', "-"), self.train_size, self.seed)
    }
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn schemes(&self) -> Result<Vec<SchemeSpec>> {
        let mut out = Vec::new();
        for s in &self.schemes {
            match s.as_str() {
                "rs" => {
                    if self.budgets.is_empty() {
                        return Err(usage("scheme `rs` needs a non-empty `budgets` list"));
                    }
                    out.extend(self.budgets.iter().map(|&budget| SchemeSpec::Rs { budget }));
                }
                "pps" | "star" => {
                    if self.fidelities.is_empty() {
                        return Err(usage(format!("scheme `{s}` needs a non-empty `fidelities` list")));
                    }
                    out.extend(self.fidelities.iter().map(|&fidelity| match s.as_str() {
                        "pps" => SchemeSpec::Pps { fidelity },
                        _ => SchemeSpec::Star { fidelity },
                    }));
                }
                _ => out.push(s.parse().map_err(|e: femlab::Error| usage(e.to_string()))?),
            }
        }
        for s in &out {
            s.validate().map_err(|e| usage(e.to_string()))?;
        }
        Ok(out)
    }

    /// Scheme-major, then train size, then seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let schemes = self.schemes()?;
        let mut cells = Vec::new();
        for scheme in &schemes {
            for &train_size in &self.train_sizes {
                for &seed in &self.seeds {
                    cells.push(Cell {
                        scheme: *scheme,
                        train_size,
                        seed,
                    });
                }
            }
        }
        if cells.is_empty() {
            return Err(usage("the grid has no cells"));
        }
        if self.train_sizes.contains(&0) || self.test_size == 0 {
            return Err(usage("train and test sizes must be >= 1"));
        }
        self.shape()?;
        Ok(cells)
    }

    pub fn shape(&self) -> Result<TaskShape> {
        TaskShape::new(self.vocab, self.question_len, self.max_len, self.variable_length)
            .map_err(|e| usage(e.to_string()))
    }

    pub fn run_config(&self, cell: &Cell, data: PathBuf) -> RunConfig {
        RunConfig {
            data,
            scheme: cell.scheme.to_string(),
            iterations: self.iterations,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            seed: cell.seed,
            shuffle_updates: self.shuffle_updates,
            freeze_grad_point: self.freeze_grad_point,
            max_len: self.max_len,
            variable_length: self.variable_length,
            init: self.init.clone(),
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    cell: &'a str,
    train_size: usize,
    iteration: usize,
    scheme: &'a str,
    seed: u64,
    test_accuracy: f64,
    data_utilization: f64,
    mean_rationale_len_accepted: Option<f64>,
    mean_rationale_len_decoded: f64,
    mean_attempts: f64,
    train_marginal_loglik: f64,
}

impl<'a> SweepRow<'a> {
    fn new(cell: &'a str, train_size: usize, m: &'a MetricsRecord) -> Self {
        Self {
            cell,
            train_size,
            iteration: m.iteration,
            scheme: &m.scheme,
            seed: m.seed,
            test_accuracy: m.test_accuracy,
            data_utilization: m.data_utilization,
            mean_rationale_len_accepted: m.mean_rationale_len_accepted,
            mean_rationale_len_decoded: m.mean_rationale_len_decoded,
            mean_attempts: m.mean_attempts,
            train_marginal_loglik: m.train_marginal_loglik,
        }
    }
}

#[derive(Debug, Serialize)]
struct CellRow {
    cell: String,
    scheme: String,
    train_size: usize,
    seed: u64,
    status: &'static str,
    final_test_accuracy: Option<f64>,
    error: String,
}

pub struct SweepOutcome {
    pub cells: usize,
    pub failed: Vec<(String, String)>,
}

fn run_cell(grid: &GridConfig, cell: &Cell, dir: &Path) -> Result<(f64, Vec<MetricsRecord>)> {
    let shape = grid.shape()?;
    let data = generate_dataset(&shape, cell.train_size, grid.test_size, cell.seed)?;
    let data_dir = dir.join("data");
    write_dataset_dir(&data_dir, &shape, &data)?;
    let cfg = grid.run_config(cell, data_dir);
    cfg.train_config()?;
    cfg.init_spec()?;
    let manifest = train_run(&cfg, dir)?;
    let text = std::fs::read_to_string(dir.join(METRICS_JSONL))?;
    let records = text
        .lines()
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<MetricsRecord>, _>>()?;
    Ok((manifest.final_accuracy, records))
}

/// Runs every cell in order. A failing cell is recorded and the rest still run.
pub fn run_sweep(grid: &GridConfig, out_dir: &Path) -> Result<SweepOutcome> {
    let cells = grid.cells()?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    std::fs::write(out_dir.join("grid.toml"), toml::to_string(grid)?)?;

    let mut sweep = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(out_dir.join(SWEEP_CSV))?));
    sweep.write_record(sweep_columns())?;
    let mut status = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join(CELLS_CSV))?));

    let mut failed = Vec::new();
    for cell in &cells {
        let name = cell.name();
        let dir = out_dir.join("cells").join(&name);
        let row = match run_cell(grid, cell, &dir) {
            Ok((acc, records)) => {
                for r in &records {
                    sweep.serialize(SweepRow::new(&name, cell.train_size, r))?;
                }
                CellRow {
                    cell: name.clone(),
                    scheme: cell.scheme.to_string(),
                    train_size: cell.train_size,
                    seed: cell.seed,
                    status: "ok",
                    final_test_accuracy: Some(acc),
                    error: String::new(),
                }
            }
            Err(e) => {
                let msg = format!("{e:#}");
                eprintln!("cell {name} failed: {msg}");
                failed.push((name.clone(), msg.clone()));
                CellRow {
                    cell: name.clone(),
                    scheme: cell.scheme.to_string(),
                    train_size: cell.train_size,
                    seed: cell.seed,
                    status: "failed",
                    final_test_accuracy: None,
                    error: msg,
                }
            }
        };
        status.serialize(row)?;
        sweep.flush()?;
        status.flush()?;
    }
    Ok(SweepOutcome {
        cells: cells.len(),
        failed,
    })
}
