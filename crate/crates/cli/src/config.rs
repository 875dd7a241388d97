//! Run configuration: built-in defaults, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use femlab::samplers::SchemeSpec;
use femlab::seqmodel::TaskShape;
use femlab::trainer::{InitSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::failure::usage;

/// A fully resolved training run. Serialized as the run's `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub scheme: String,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub shuffle_updates: bool,
    pub freeze_grad_point: bool,
    pub max_len: usize,
    pub variable_length: bool,
    pub init: String,
    /// Start from this checkpoint instead of `init`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

/// The same keys, all optional, as read from a `--config` file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: Option<PathBuf>,
    pub scheme: Option<String>,
    pub iterations: Option<usize>,
    pub lr_start: Option<f64>,
    pub lr_end: Option<f64>,
    pub seed: Option<u64>,
    pub shuffle_updates: Option<bool>,
    pub freeze_grad_point: Option<bool>,
    pub max_len: Option<usize>,
    pub variable_length: Option<bool>,
    pub init: Option<String>,
    pub init_checkpoint: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` win.
    pub fn merge(self, over: RunConfigFile) -> RunConfigFile {
        RunConfigFile {
            data: over.data.or(self.data),
            scheme: over.scheme.or(self.scheme),
            iterations: over.iterations.or(self.iterations),
            lr_start: over.lr_start.or(self.lr_start),
            lr_end: over.lr_end.or(self.lr_end),
            seed: over.seed.or(self.seed),
            shuffle_updates: over.shuffle_updates.or(self.shuffle_updates),
            freeze_grad_point: over.freeze_grad_point.or(self.freeze_grad_point),
            max_len: over.max_len.or(self.max_len),
            variable_length: over.variable_length.or(self.variable_length),
            init: over.init.or(self.init),
            init_checkpoint: over.init_checkpoint.or(self.init_checkpoint),
        }
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let d = TrainConfig::default();
        let shape = TaskShape::default();
        let cfg = RunConfig {
            data: self.data.ok_or_else(|| usage("no dataset given; pass --data or set `data` in the config"))?,
            scheme: self.scheme.unwrap_or_else(|| d.scheme.to_string()),
            iterations: self.iterations.unwrap_or(d.iterations),
            lr_start: self.lr_start.unwrap_or(d.lr_start),
            lr_end: self.lr_end.unwrap_or(d.lr_end),
            seed: self.seed.unwrap_or(d.seed),
            shuffle_updates: self.shuffle_updates.unwrap_or(d.shuffle_updates),
            freeze_grad_point: self.freeze_grad_point.unwrap_or(d.freeze_grad_point),
            max_len: self.max_len.unwrap_or(shape.max_len),
            variable_length: self.variable_length.unwrap_or(shape.variable_length),
            init: self.init.unwrap_or_else(|| InitSpec::default().to_string()),
            init_checkpoint: self.init_checkpoint,
        };
        cfg.train_config()?;
        cfg.init_spec()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn scheme_spec(&self) -> Result<SchemeSpec> {
        self.scheme.parse().map_err(|e: femlab::Error| usage(e.to_string()))
    }

    pub fn init_spec(&self) -> Result<InitSpec> {
        self.init.parse().map_err(|e: femlab::Error| usage(e.to_string()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            iterations: self.iterations,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            scheme: self.scheme_spec()?,
            shuffle_updates: self.shuffle_updates,
            seed: self.seed,
            freeze_grad_point: self.freeze_grad_point,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn shape(&self, vocab: usize, question_len: usize) -> Result<TaskShape> {
        TaskShape::new(vocab, question_len, self.max_len, self.variable_length).map_err(|e| usage(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_data() -> RunConfigFile {
        RunConfigFile {
            data: Some("d".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults() {
        let cfg = with_data().resolve().unwrap();
        assert_eq!(cfg.scheme, "pps:0.1");
        assert_eq!((cfg.iterations, cfg.lr_start, cfg.lr_end, cfg.seed), (10, 0.5, 0.05, 257));
        assert_eq!((cfg.max_len, cfg.variable_length), (6, true));
        assert_eq!(cfg.init, "prior:5:0.5");
        assert!(cfg.shuffle_updates && !cfg.freeze_grad_point);
    }

    #[test]
    fn flags_override_file() {
        let file: RunConfigFile = toml::from_str("data = \"a\"\nscheme = \"rs:3\"\niterations = 4\n").unwrap();
        let flags = RunConfigFile {
            iterations: Some(7),
            ..Default::default()
        };
        let cfg = file.merge(flags).resolve().unwrap();
        assert_eq!((cfg.data, cfg.scheme, cfg.iterations), ("a".into(), "rs:3".into(), 7));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = with_data().resolve().unwrap();
        cfg.init_checkpoint = Some("init/policy".into());
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let file: RunConfigFile = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(file.resolve().unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = [
            RunConfigFile { scheme: Some("rs:0".into()), ..with_data() },
            RunConfigFile { iterations: Some(0), ..with_data() },
            RunConfigFile { lr_end: Some(0.9), ..with_data() },
            RunConfigFile { init: Some("ones".into()), ..with_data() },
            RunConfigFile::default(),
        ];
        for b in bad {
            let err = b.resolve().unwrap_err();
            assert_eq!(crate::failure::exit_code(&err), crate::failure::EXIT_USAGE, "{err}");
        }
        assert!(toml::from_str::<RunConfigFile>("colour = 3").is_err());
    }
}
