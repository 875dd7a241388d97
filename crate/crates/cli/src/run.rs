//! A training run directory:
//!
//! ```text
//! <out>/config.toml            resolved configuration
//! <out>/metrics.jsonl          one record per iteration
//! <out>/metrics.csv            the same records as a table
//! <out>/checkpoints/policy-iter-<k>   k = 0..=K
//! <out>/manifest.json
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use femlab::seqmodel::{read_checkpoint, write_checkpoint, PolicyParams};
use femlab::taskgen::{read_dataset_dir, TEST_FILE, TRAIN_FILE};
use femlab::trainer::{fem_train_with, write_metrics_csv, write_metrics_jsonl, MetricsRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_name(k: usize) -> String {
    format!("policy-iter-{k}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: String,
    pub metrics_jsonl: String,
    pub metrics_csv: String,
    pub checkpoints: Vec<String>,
    pub dataset: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of `config.toml` as written.
    pub config_digest: String,
    /// SHA-256 over the train split bytes followed by the test split bytes.
    pub data_digest: String,
    pub seed: u64,
    pub scheme: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub base_accuracy: f64,
    pub final_accuracy: f64,
    /// Paths relative to the run directory, except the dataset.
    pub artifacts: Artifacts,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn dataset_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [TRAIN_FILE, TEST_FILE] {
        let path = dir.join(name);
        h.update(std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Runs FEM as described by `cfg` and fills `out_dir`.
pub fn train_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    let started_unix_ms = now_ms();
    let train_cfg = cfg.train_config()?;
    let data_dir = std::fs::canonicalize(&cfg.data).with_context(|| format!("dataset {}", cfg.data.display()))?;
    let (vocab, question_len, data) =
        read_dataset_dir(&data_dir).with_context(|| format!("loading dataset {}", data_dir.display()))?;
    let shape = cfg.shape(vocab, question_len)?;
    let init = match &cfg.init_checkpoint {
        Some(path) => {
            let (ck_shape, params) =
                read_checkpoint(path).with_context(|| format!("loading initial checkpoint {}", path.display()))?;
            if ck_shape.vocab != vocab {
                bail!(
                    "initial checkpoint {} has vocab {}, dataset has vocab {vocab}",
                    path.display(),
                    ck_shape.vocab
                );
            }
            params
        }
        None => cfg.init_spec()?.build(&shape, cfg.seed)?,
    };

    let ck_dir = out_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ck_dir).with_context(|| format!("creating {}", ck_dir.display()))?;
    let mut resolved = cfg.clone();
    resolved.data = data_dir.clone();
    let config_text = resolved.to_toml();
    std::fs::write(out_dir.join(CONFIG_FILE), &config_text)?;

    let mut checkpoints = Vec::with_capacity(cfg.iterations + 1);
    let mut save = |k: usize, params: &PolicyParams| -> femlab::Result<()> {
        let rel = format!("{CHECKPOINT_DIR}/{}", checkpoint_name(k));
        write_checkpoint(&out_dir.join(&rel), &shape, params)?;
        checkpoints.push(rel);
        Ok(())
    };
    save(0, &init)?;

    let mut jsonl = BufWriter::new(File::create(out_dir.join(METRICS_JSONL))?);
    let mut records = Vec::with_capacity(cfg.iterations);
    let outcome = fem_train_with(&data, &shape, &init, &train_cfg, |report| {
        let rec = MetricsRecord::new(report.metrics, &train_cfg.scheme, cfg.seed);
        write_metrics_jsonl(&mut jsonl, std::slice::from_ref(&rec))?;
        jsonl.flush()?;
        records.push(rec);
        save(report.metrics.iteration, report.params)
    })
    .with_context(|| format!("training run in {}", out_dir.display()))?;
    drop(jsonl);
    write_metrics_csv(BufWriter::new(File::create(out_dir.join(METRICS_CSV))?), &records)?;

    let manifest = RunManifest {
        tool_version: crate::tool_version(),
        config_digest: sha256_hex(config_text.as_bytes()),
        data_digest: dataset_digest(&data_dir)?,
        seed: cfg.seed,
        scheme: train_cfg.scheme.to_string(),
        started_unix_ms,
        finished_unix_ms: now_ms(),
        base_accuracy: outcome.base_accuracy,
        final_accuracy: outcome.metrics.last().map(|m| m.test_accuracy).unwrap_or(outcome.base_accuracy),
        artifacts: Artifacts {
            config: CONFIG_FILE.into(),
            metrics_jsonl: METRICS_JSONL.into(),
            metrics_csv: METRICS_CSV.into(),
            checkpoints,
            dataset: data_dir,
        },
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}
