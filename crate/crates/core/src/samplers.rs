//! Rationale proposal distributions `q(ẑ, ŷ | x, y*; θ)`.
//!
//! * `RS{M}`: up to `M` unconditioned rollouts, keeping the first whose answer
//!   matches; after `M` misses the last rollout is returned with reward 0.
//! * `ExactPosterior`: `π(z | x, y*; θ)` sampled exactly by tilting the
//!   forward transitions with backward messages.
//! * `PPS{ε}`: hint-conditioned sampling that draws the exact posterior with
//!   probability `1 - ε`, otherwise one unconditioned rollout.
//! * `STaR{ε}`: one unconditioned rollout, falling back to `PPS{ε}` when it
//!   misses.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numeric::{logsumexp, sample_log_weights};
use crate::seqmodel::{sample_rollout_unchecked, Answer, PolicyParams, Prev, Question, Rationale, StepKind, TaskShape};
use crate::taskgen::{reward, Datapoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeSpec {
    Rs { budget: u32 },
    Star { fidelity: f64 },
    Pps { fidelity: f64 },
    ExactPosterior,
}

impl SchemeSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SchemeSpec::Rs { budget } if budget < 1 => Err(contract("RS budget must be >= 1")),
            SchemeSpec::Star { fidelity } | SchemeSpec::Pps { fidelity } if !(0.0..=1.0).contains(&fidelity) => {
                Err(contract(format!("hint fidelity must lie in [0, 1], got {fidelity}")))
            }
            _ => Ok(()),
        }
    }
}

/// `rs:<M>`, `star:<ε>`, `pps:<ε>` or `exact`.
impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSpec::Rs { budget } => write!(f, "rs:{budget}"),
            SchemeSpec::Star { fidelity } => write!(f, "star:{fidelity}"),
            SchemeSpec::Pps { fidelity } => write!(f, "pps:{fidelity}"),
            SchemeSpec::ExactPosterior => f.write_str("exact"),
        }
    }
}

impl FromStr for SchemeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || contract(format!("malformed scheme `{s}`; expected rs:<M>, star:<eps>, pps:<eps> or exact"));
        let spec = match s.split_once(':') {
            None if s == "exact" => SchemeSpec::ExactPosterior,
            Some(("rs", m)) => SchemeSpec::Rs {
                budget: m.parse().map_err(|_| bad())?,
            },
            Some(("star", e)) => SchemeSpec::Star {
                fidelity: e.parse().map_err(|_| bad())?,
            },
            Some(("pps", e)) => SchemeSpec::Pps {
                fidelity: e.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Backward messages `β(t, last) = log P(answer = y* | prefix of length t ending in last)`.
#[derive(Clone, Debug)]
pub struct PosteriorMessages {
    vocab: usize,
    max_len: usize,
    y_star: Answer,
    /// `(max_len + 1) x (vocab + 1)`; slot `vocab` in row 0 is BOS, other
    /// unreachable slots hold `-inf`.
    log_beta: Vec<f64>,
}

impl PosteriorMessages {
    pub fn log_beta(&self, t: usize, last: Prev) -> f64 {
        let idx = match last {
            Prev::Bos => self.vocab,
            Prev::Token(c) => c,
        };
        self.log_beta[t * (self.vocab + 1) + idx]
    }

    /// `log P(y = y* | x; θ)`.
    pub fn log_marginal(&self) -> f64 {
        self.log_beta(0, Prev::Bos)
    }

    pub fn y_star(&self) -> Answer {
        self.y_star
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn at(&self, t: usize, last: usize) -> f64 {
        self.log_beta[t * (self.vocab + 1) + last]
    }
}

fn check_inputs(params: &PolicyParams, shape: &TaskShape, x: &Question, y_star: Answer) -> Result<()> {
    if params.vocab() != shape.vocab {
        return Err(contract("parameter vocab does not match shape"));
    }
    shape.check_question(x)?;
    shape.check_answer(y_star)
}

/// Log-weights of the tilted transition out of `(t, last)`: tokens first, STOP last.
fn tilted_weights(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    msgs: &PosteriorMessages,
    t: usize,
    last: usize,
    out: &mut [f64],
) {
    let v = shape.vocab;
    let step = t + 1;
    params.step_log_probs_into(shape, last, shape.feature(x, step), step, out);
    for (c, o) in out[..v].iter_mut().enumerate() {
        *o += msgs.at(step, c);
    }
    out[v] = if t == 0 || out[v] == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        out[v] + params.answer_log_prob(last, msgs.y_star.0)
    };
}

/// Backward recursion over `(t, last)` for a fixed target answer.
pub fn compute_messages(params: &PolicyParams, shape: &TaskShape, x: &Question, y_star: Answer) -> Result<PosteriorMessages> {
    check_inputs(params, shape, x, y_star)?;
    let v = shape.vocab;
    let l_max = shape.max_len;
    let mut msgs = PosteriorMessages {
        vocab: v,
        max_len: l_max,
        y_star,
        log_beta: vec![f64::NEG_INFINITY; (l_max + 1) * (v + 1)],
    };
    for last in 0..v {
        msgs.log_beta[l_max * (v + 1) + last] = params.answer_log_prob(last, y_star.0);
    }
    let mut w = vec![0.0; v + 1];
    for t in (1..l_max).rev() {
        for last in 0..v {
            tilted_weights(params, shape, x, &msgs, t, last, &mut w);
            msgs.log_beta[t * (v + 1) + last] = logsumexp(&w);
        }
    }
    tilted_weights(params, shape, x, &msgs, 0, v, &mut w);
    msgs.log_beta[v] = logsumexp(&w);
    Ok(msgs)
}

fn sample_posterior_with<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    msgs: &PosteriorMessages,
    rng: &mut R,
) -> Result<Rationale> {
    if msgs.log_marginal() == f64::NEG_INFINITY {
        return Err(Error::ZeroPosteriorMass);
    }
    let v = shape.vocab;
    let mut w = vec![0.0; v + 1];
    let mut z = Vec::with_capacity(shape.max_len);
    let mut last = v;
    for t in 0..shape.max_len {
        tilted_weights(params, shape, x, msgs, t, last, &mut w);
        let next = sample_log_weights(&w, rng).ok_or(Error::ZeroPosteriorMass)?;
        if next == v {
            break;
        }
        z.push(next);
        last = next;
    }
    Ok(Rationale(z))
}

/// Exact draw from `π(z | x, y*; θ)`; the returned answer is always `y*`.
pub fn sample_exact_posterior<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    y_star: Answer,
    rng: &mut R,
) -> Result<(Rationale, Answer)> {
    let msgs = compute_messages(params, shape, x, y_star)?;
    Ok((sample_posterior_with(params, shape, x, &msgs, rng)?, y_star))
}

/// Log-probability that the tilted forward sampler produces `z`.
pub fn posterior_path_log_prob(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    msgs: &PosteriorMessages,
    z: &Rationale,
) -> Result<f64> {
    shape.check_question(x)?;
    shape.check_rationale(z)?;
    let v = shape.vocab;
    let mut w = vec![0.0; v + 1];
    let mut total = 0.0;
    let mut last = v;
    for (t, &tok) in z.0.iter().enumerate() {
        tilted_weights(params, shape, x, msgs, t, last, &mut w);
        total += w[tok] - logsumexp(&w);
        last = tok;
    }
    let t = z.len();
    if shape.step_kind(t + 1) != StepKind::ForcedStop {
        tilted_weights(params, shape, x, msgs, t, last, &mut w);
        total += w[v] - logsumexp(&w);
    }
    Ok(total)
}

/// One proposal draw together with its reward and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub z_hat: Rationale,
    pub y_hat: Answer,
    pub reward: u8,
    pub scheme: SchemeSpec,
    /// Rollouts consumed, counting a hint-conditioned draw as one.
    pub attempts_used: u32,
    pub datapoint_index: usize,
}

impl SampleRecord {
    pub fn accepted(&self) -> bool {
        self.reward == 1
    }
}

fn check_dp(params: &PolicyParams, shape: &TaskShape, dp: &Datapoint) -> Result<()> {
    check_inputs(params, shape, &dp.x, dp.y_star)
}

fn rs_unchecked<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    index: usize,
    budget: u32,
    scheme: SchemeSpec,
    rng: &mut R,
) -> SampleRecord {
    let mut m = 0;
    loop {
        m += 1;
        let (z, y) = sample_rollout_unchecked(params, shape, &dp.x, rng);
        let r = reward(y, dp.y_star);
        if r == 1 || m == budget {
            return SampleRecord {
                z_hat: z,
                y_hat: y,
                reward: r,
                scheme,
                attempts_used: m,
                datapoint_index: index,
            };
        }
    }
}

fn pps_unchecked<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    index: usize,
    epsilon: f64,
    scheme: SchemeSpec,
    rng: &mut R,
) -> Result<SampleRecord> {
    let ignore_hint = rng.gen::<f64>() < epsilon;
    let (z, y) = if ignore_hint {
        sample_rollout_unchecked(params, shape, &dp.x, rng)
    } else {
        let msgs = compute_messages(params, shape, &dp.x, dp.y_star)?;
        (sample_posterior_with(params, shape, &dp.x, &msgs, rng)?, dp.y_star)
    };
    Ok(SampleRecord {
        reward: reward(y, dp.y_star),
        z_hat: z,
        y_hat: y,
        scheme,
        attempts_used: 1,
        datapoint_index: index,
    })
}

/// Rejection sampling with budget `M`.
pub fn sample_rs<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    index: usize,
    budget: u32,
    rng: &mut R,
) -> Result<SampleRecord> {
    let scheme = SchemeSpec::Rs { budget };
    scheme.validate()?;
    check_dp(params, shape, dp)?;
    Ok(rs_unchecked(params, shape, dp, index, budget, scheme, rng))
}

/// Hint-conditioned sampling with fidelity parameter `ε`.
pub fn sample_pps<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    index: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<SampleRecord> {
    let scheme = SchemeSpec::Pps { fidelity: epsilon };
    scheme.validate()?;
    check_dp(params, shape, dp)?;
    pps_unchecked(params, shape, dp, index, epsilon, scheme, rng)
}

/// One unconditioned attempt, then hint-conditioned rationalization on a miss.
pub fn sample_star<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    index: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<SampleRecord> {
    let scheme = SchemeSpec::Star { fidelity: epsilon };
    scheme.validate()?;
    check_dp(params, shape, dp)?;
    let first = rs_unchecked(params, shape, dp, index, 1, scheme, rng);
    if first.accepted() {
        return Ok(first);
    }
    let mut second = pps_unchecked(params, shape, dp, index, epsilon, scheme, rng)?;
    second.attempts_used += first.attempts_used;
    Ok(second)
}

/// Draws one record from the requested scheme.
pub fn draw<R: Rng + ?Sized>(
    scheme: &SchemeSpec,
    params: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    index: usize,
    rng: &mut R,
) -> Result<SampleRecord> {
    match *scheme {
        SchemeSpec::Rs { budget } => sample_rs(params, shape, dp, index, budget, rng),
        SchemeSpec::Pps { fidelity } => sample_pps(params, shape, dp, index, fidelity, rng),
        SchemeSpec::Star { fidelity } => sample_star(params, shape, dp, index, fidelity, rng),
        SchemeSpec::ExactPosterior => {
            check_dp(params, shape, dp)?;
            let (z, y) = sample_exact_posterior(params, shape, &dp.x, dp.y_star, rng)?;
            Ok(SampleRecord {
                reward: reward(y, dp.y_star),
                z_hat: z,
                y_hat: y,
                scheme: *scheme,
                attempts_used: 1,
                datapoint_index: index,
            })
        }
    }
}
