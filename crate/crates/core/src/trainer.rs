//! Filtered EM.
//!
//! Each iteration `k`:
//!
//! 1. E-step: draw one [`SampleRecord`] per training point from the scheme,
//!    all against the frozen snapshot `θ^(k-1)`.
//! 2. M-step: starting from a copy of the snapshot, walk the records and apply
//!    `θ ← θ + η_k · r · ∇ log π(ẑ, ŷ | x; θ)`. Reward-0 records are skipped.
//! 3. Metrics on the held-out split via greedy decoding.
//!
//! The learning rate decays linearly from `lr_start` to `lr_end` across
//! iterations and is constant within one.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rng::{stream, Domain};
use crate::samplers::{compute_messages, draw, SampleRecord, SchemeSpec};
use crate::seqmodel::{accumulate_grad_unchecked, greedy_decode_unchecked, PolicyParams, TaskShape};
use crate::taskgen::{Dataset, Datapoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub scheme: SchemeSpec,
    pub shuffle_updates: bool,
    pub seed: u64,
    /// Evaluate every gradient at the snapshot `θ^(k-1)` instead of the
    /// running iterate.
    pub freeze_grad_point: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            lr_start: 0.5,
            lr_end: 0.05,
            scheme: SchemeSpec::Pps { fidelity: 0.1 },
            shuffle_updates: true,
            seed: 257,
            freeze_grad_point: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(contract("iterations must be >= 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(contract(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        self.scheme.validate()
    }

    /// `η_k` for `k = 1..=K`; exact at both endpoints.
    pub fn learning_rate(&self, k: usize) -> f64 {
        let span = (self.iterations.max(2) - 1) as f64;
        let s = (k.saturating_sub(1)) as f64 / span;
        (1.0 - s) * self.lr_start + s * self.lr_end
    }
}

/// How `θ^(0)` is built.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Zeros,
    /// Every logit uniform in `[-scale, scale]`.
    Uniform { scale: f64 },
    /// A base policy that already carries the prefix-sum transitions and
    /// answer head at logit `±strength`, plus uniform noise in `[-noise, noise]`.
    /// It never chooses STOP on its own, so when `max_len > question_len` its
    /// greedy accuracy is chance.
    PrefixPrior { strength: f64, noise: f64 },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::PrefixPrior {
            strength: 5.0,
            noise: 0.5,
        }
    }
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitSpec::Zeros => true,
            InitSpec::Uniform { scale } => scale.is_finite() && scale >= 0.0,
            InitSpec::PrefixPrior { strength, noise } => {
                strength.is_finite() && noise.is_finite() && strength >= 0.0 && noise >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(contract(format!("init `{self}` needs finite non-negative values")))
        }
    }

    /// Noise is drawn from the `Init` domain, so the result depends only on
    /// `(shape, seed)`.
    pub fn build(&self, shape: &TaskShape, seed: u64) -> Result<PolicyParams> {
        self.validate()?;
        shape.validate()?;
        let mut rng = stream(seed, Domain::Init, 0, 0);
        Ok(match *self {
            InitSpec::Zeros => PolicyParams::zeros(shape.vocab),
            InitSpec::Uniform { scale } => PolicyParams::random(shape.vocab, scale, &mut rng),
            InitSpec::PrefixPrior { strength, noise } => {
                let mut p = PolicyParams::random(shape.vocab, noise, &mut rng);
                p.add_scaled(PolicyParams::prefix_sum(shape, 1.0).as_slice(), strength);
                p
            }
        })
    }
}

/// `zeros`, `uniform:<scale>` or `prior:<strength>:<noise>`.
impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Zeros => f.write_str("zeros"),
            InitSpec::Uniform { scale } => write!(f, "uniform:{scale}"),
            InitSpec::PrefixPrior { strength, noise } => write!(f, "prior:{strength}:{noise}"),
        }
    }
}

impl FromStr for InitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || contract(format!("malformed init `{s}`; expected zeros, uniform:<scale> or prior:<strength>:<noise>"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        let spec = match parts.as_slice() {
            ["zeros"] => InitSpec::Zeros,
            ["uniform", scale] => InitSpec::Uniform { scale: num(scale)? },
            ["prior", strength, noise] => InitSpec::PrefixPrior {
                strength: num(strength)?,
                noise: num(noise)?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub test_accuracy: f64,
    pub data_utilization: f64,
    /// `None` when no record was accepted.
    pub mean_rationale_len_accepted: Option<f64>,
    pub mean_rationale_len_decoded: f64,
    pub mean_attempts: f64,
    /// `Σ_i log P(y_i* | x_i; θ^(k))` over the training split.
    pub train_marginal_loglik: f64,
}

/// Everything an observer may want after an iteration completes.
pub struct IterationReport<'a> {
    pub metrics: &'a IterationMetrics,
    pub params: &'a PolicyParams,
    pub records: &'a [SampleRecord],
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<IterationMetrics>,
    /// Greedy test accuracy of the initial parameters.
    pub base_accuracy: f64,
}

/// Mean reward of the records.
pub fn utilization(records: &[SampleRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(contract("utilization of an empty record list"));
    }
    let accepted = records.iter().filter(|r| r.accepted()).count();
    Ok(accepted as f64 / records.len() as f64)
}

/// Greedy-decode accuracy and mean decoded rationale length.
pub fn evaluate(params: &PolicyParams, shape: &TaskShape, data: &[Datapoint]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(contract("evaluation set is empty"));
    }
    if params.vocab() != shape.vocab {
        return Err(contract("parameter vocab does not match shape"));
    }
    let mut correct = 0usize;
    let mut len = 0usize;
    for dp in data {
        shape.check_question(&dp.x)?;
        let (z, y) = greedy_decode_unchecked(params, shape, &dp.x);
        correct += usize::from(y == dp.y_star);
        len += z.len();
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, len as f64 / n))
}

/// `Σ_i log P(y_i* | x_i; θ)` via backward messages.
pub fn marginal_loglik(params: &PolicyParams, shape: &TaskShape, data: &[Datapoint]) -> Result<f64> {
    data.iter()
        .map(|dp| compute_messages(params, shape, &dp.x, dp.y_star).map(|m| m.log_marginal()))
        .sum()
}

/// E-step against a frozen snapshot. Lane `i` of the iteration's stream drives
/// datapoint `i`, so the result does not depend on scheduling.
pub fn e_step(
    snapshot: &PolicyParams,
    shape: &TaskShape,
    train: &[Datapoint],
    scheme: &SchemeSpec,
    seed: u64,
    iteration: usize,
) -> Result<Vec<SampleRecord>> {
    train
        .par_iter()
        .enumerate()
        .map(|(i, dp)| {
            let mut rng = stream(seed, Domain::Sampling, iteration as u64, i as u64);
            draw(scheme, snapshot, shape, dp, i, &mut rng)
        })
        .collect()
}

/// Order in which the M-step visits records.
pub fn update_order(n: usize, cfg: &TrainConfig, iteration: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle_updates {
        order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, iteration as u64, 0));
    }
    order
}

/// Reward-filtered sequential ascent starting from a copy of `snapshot`.
#[allow(clippy::too_many_arguments)]
pub fn m_step(
    snapshot: &PolicyParams,
    shape: &TaskShape,
    train: &[Datapoint],
    records: &[SampleRecord],
    order: &[usize],
    lr: f64,
    freeze_grad_point: bool,
    iteration: usize,
) -> Result<PolicyParams> {
    let mut theta = snapshot.clone();
    let mut grad = vec![0.0; theta.len()];
    for &i in order {
        let rec = &records[i];
        if rec.reward == 0 {
            continue;
        }
        let dp = &train[rec.datapoint_index];
        grad.fill(0.0);
        let at = if freeze_grad_point { snapshot } else { &theta };
        accumulate_grad_unchecked(at, shape, &dp.x, &rec.z_hat, rec.y_hat, f64::from(rec.reward), &mut grad);
        theta.add_scaled(&grad, lr);
        if !theta.all_finite() {
            return Err(Error::NonFinite {
                iteration,
                datapoint: rec.datapoint_index,
            });
        }
    }
    Ok(theta)
}

pub fn fem_train(data: &Dataset, shape: &TaskShape, init: &PolicyParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fem_train_with(data, shape, init, cfg, |_| Ok(()))
}

/// As [`fem_train`], calling `observer` after every iteration.
pub fn fem_train_with<F>(
    data: &Dataset,
    shape: &TaskShape,
    init: &PolicyParams,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&IterationReport<'_>) -> Result<()>,
{
    cfg.validate()?;
    shape.validate()?;
    if init.vocab() != shape.vocab {
        return Err(contract("initial parameters do not match the task shape"));
    }
    if data.train.is_empty() {
        return Err(contract("training split is empty"));
    }
    let (base_accuracy, _) = evaluate(init, shape, &data.test)?;

    let mut theta = init.clone();
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for k in 1..=cfg.iterations {
        let records = e_step(&theta, shape, &data.train, &cfg.scheme, cfg.seed, k)?;
        let order = update_order(records.len(), cfg, k);
        let lr = cfg.learning_rate(k);
        theta = m_step(&theta, shape, &data.train, &records, &order, lr, cfg.freeze_grad_point, k)?;

        let (test_accuracy, mean_rationale_len_decoded) = evaluate(&theta, shape, &data.test)?;
        let accepted: Vec<&SampleRecord> = records.iter().filter(|r| r.accepted()).collect();
        let mean_rationale_len_accepted = (!accepted.is_empty())
            .then(|| accepted.iter().map(|r| r.z_hat.len() as f64).sum::<f64>() / accepted.len() as f64);
        let m = IterationMetrics {
            iteration: k,
            test_accuracy,
            data_utilization: utilization(&records)?,
            mean_rationale_len_accepted,
            mean_rationale_len_decoded,
            mean_attempts: records.iter().map(|r| f64::from(r.attempts_used)).sum::<f64>() / records.len() as f64,
            train_marginal_loglik: marginal_loglik(&theta, shape, &data.train)?,
        };
        observer(&IterationReport {
            metrics: &m,
            params: &theta,
            records: &records,
        })?;
        metrics.push(m);
    }
    Ok(TrainOutcome {
        params: theta,
        metrics,
        base_accuracy,
    })
}

/// Column order of the per-iteration CSV summary.
pub const CSV_COLUMNS: [&str; 9] = [
    "iteration",
    "scheme",
    "seed",
    "test_accuracy",
    "data_utilization",
    "mean_rationale_len_accepted",
    "mean_rationale_len_decoded",
    "mean_attempts",
    "train_marginal_loglik",
];

/// One line of the metrics stream: the iteration metrics plus run identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub scheme: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub data_utilization: f64,
    pub mean_rationale_len_accepted: Option<f64>,
    pub mean_rationale_len_decoded: f64,
    pub mean_attempts: f64,
    pub train_marginal_loglik: f64,
}

impl MetricsRecord {
    pub fn new(m: &IterationMetrics, scheme: &SchemeSpec, seed: u64) -> Self {
        Self {
            iteration: m.iteration,
            scheme: scheme.to_string(),
            seed,
            test_accuracy: m.test_accuracy,
            data_utilization: m.data_utilization,
            mean_rationale_len_accepted: m.mean_rationale_len_accepted,
            mean_rationale_len_decoded: m.mean_rationale_len_decoded,
            mean_attempts: m.mean_attempts,
            train_marginal_loglik: m.train_marginal_loglik,
        }
    }
}

/// Appends one JSON object per line.
pub fn write_metrics_jsonl<W: Write>(out: &mut W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Header plus one row per record, columns as in [`CSV_COLUMNS`].
pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}
