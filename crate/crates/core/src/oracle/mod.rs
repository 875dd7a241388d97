//! Brute-force and analytic references.
//!
//! Everything here works by exhaustive enumeration of `(z, y)` and is only
//! meant for small shapes. Path probabilities are recomputed from the raw
//! logits as explicit products of softmax entries, independently of the
//! log-space code in [`crate::seqmodel`], so the two can check each other.

pub mod suites;

use crate::error::{contract, Error, Result};
use crate::samplers::SchemeSpec;
use crate::seqmodel::{
    accumulate_grad_unchecked, log_joint_unchecked, Answer, PolicyParams, Question, Rationale, StepKind, TaskShape,
};
use crate::taskgen::{reward, Datapoint};

/// Largest `(z, y)` space the oracles agree to enumerate.
pub const MAX_OUTCOMES: u128 = 1_000_000;

#[derive(Clone, Debug)]
pub struct EnumeratedJoint {
    pub outcomes: Vec<(Rationale, Answer, f64)>,
    pub total: f64,
}

impl EnumeratedJoint {
    /// `P(y = y* | x)`.
    pub fn marginal(&self, y_star: Answer) -> f64 {
        self.outcomes.iter().filter(|o| o.1 == y_star).map(|o| o.2).sum()
    }
}

/// Shifted softmax over the live prefix of `logits`; dead entries get 0.
fn softmax(logits: &[f64], live: usize) -> Vec<f64> {
    let max = logits[..live].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits[..live].iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut p: Vec<f64> = exps.into_iter().map(|e| e / z).collect();
    p.resize(logits.len(), 0.0);
    p
}

/// `π(z, y | x; θ)` as a plain product of probabilities.
pub fn path_probability(params: &PolicyParams, shape: &TaskShape, x: &Question, z: &Rationale, y: Answer) -> f64 {
    let v = shape.vocab;
    let live = |t: usize| match shape.step_kind(t) {
        StepKind::Free => v + 1,
        _ => v,
    };
    let mut prob = 1.0;
    let mut prev = v;
    for (i, &tok) in z.0.iter().enumerate() {
        let t = i + 1;
        let off = params.transition_offset(prev, shape.feature(x, t));
        prob *= softmax(&params.as_slice()[off..off + v + 1], live(t))[tok];
        prev = tok;
    }
    let t = z.len() + 1;
    if shape.step_kind(t) == StepKind::Free {
        let off = params.transition_offset(prev, shape.feature(x, t));
        prob *= softmax(&params.as_slice()[off..off + v + 1], v + 1)[v];
    }
    prob * softmax(params.answer_row(prev), v)[y.0]
}

/// All rationales admissible under `shape`, shortest first, lexicographic within a length.
pub fn all_rationales(shape: &TaskShape) -> Vec<Rationale> {
    let v = shape.vocab;
    let mut out = Vec::new();
    for len in shape.lengths() {
        for code in 0..v.pow(len as u32) {
            let mut digits = vec![0; len];
            let mut rest = code;
            for d in digits.iter_mut().rev() {
                *d = rest % v;
                rest /= v;
            }
            out.push(Rationale(digits));
        }
    }
    out
}

fn check_enumerable(params: &PolicyParams, shape: &TaskShape, x: &Question) -> Result<()> {
    shape.validate()?;
    if params.vocab() != shape.vocab {
        return Err(contract("parameter vocab does not match shape"));
    }
    shape.check_question(x)?;
    let outcomes = shape.outcome_count();
    if outcomes > MAX_OUTCOMES {
        return Err(Error::TooLarge {
            outcomes,
            limit: MAX_OUTCOMES,
        });
    }
    Ok(())
}

/// Every `(z, y)` with its probability.
pub fn enumerate_joint(params: &PolicyParams, shape: &TaskShape, x: &Question) -> Result<EnumeratedJoint> {
    check_enumerable(params, shape, x)?;
    let mut outcomes = Vec::new();
    let mut total = 0.0;
    for z in all_rationales(shape) {
        for y in 0..shape.vocab {
            let p = path_probability(params, shape, x, &z, Answer(y));
            total += p;
            outcomes.push((z.clone(), Answer(y), p));
        }
    }
    Ok(EnumeratedJoint { outcomes, total })
}

/// `π(z | x, y*; θ)` for every rationale.
pub fn exact_posterior(params: &PolicyParams, shape: &TaskShape, x: &Question, y_star: Answer) -> Result<Vec<(Rationale, f64)>> {
    shape.check_answer(y_star)?;
    let joint = enumerate_joint(params, shape, x)?;
    let marginal = joint.marginal(y_star);
    if marginal <= 0.0 {
        return Err(Error::ZeroPosteriorMass);
    }
    Ok(joint
        .outcomes
        .into_iter()
        .filter(|o| o.1 == y_star)
        .map(|(z, _, p)| (z, p / marginal))
        .collect())
}

/// Law of the `(ẑ, ŷ)` emitted by a proposal scheme at parameters `params_q`.
///
/// RS(M) keeps the first hit among `M` rollouts, so a hit `(z, y*)` has
/// weight `π(z, y*) Σ_{m<M} (1-p)^m` and a miss `(z, y)` has weight
/// `(1-p)^{M-1} π(z, y)`. PPS(ε) mixes the posterior with one rollout and
/// STaR(ε) is a hit of one rollout or, after a miss, PPS(ε).
pub fn scheme_law(
    scheme: &SchemeSpec,
    params_q: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
) -> Result<Vec<(Rationale, Answer, f64)>> {
    scheme.validate()?;
    shape.check_answer(dp.y_star)?;
    let joint = enumerate_joint(params_q, shape, &dp.x)?;
    let p = joint.marginal(dp.y_star);
    let hit = |y: Answer| y == dp.y_star;
    let posterior = |z_prob: f64, y: Answer| if hit(y) && p > 0.0 { z_prob / p } else { 0.0 };
    let pps = |eps: f64, prob: f64, y: Answer| (1.0 - eps) * posterior(prob, y) + eps * prob;
    let law = joint
        .outcomes
        .into_iter()
        .map(|(z, y, prob)| {
            let w = match *scheme {
                SchemeSpec::Rs { budget } => {
                    if hit(y) {
                        prob * (0..budget).map(|m| (1.0 - p).powi(m as i32)).sum::<f64>()
                    } else {
                        (1.0 - p).powi(budget as i32 - 1) * prob
                    }
                }
                SchemeSpec::ExactPosterior => posterior(prob, y),
                SchemeSpec::Pps { fidelity } => pps(fidelity, prob, y),
                SchemeSpec::Star { fidelity } => {
                    let first = if hit(y) { prob } else { 0.0 };
                    first + (1.0 - p) * pps(fidelity, prob, y)
                }
            };
            (z, y, w)
        })
        .collect();
    Ok(law)
}

/// `Σ_{(ẑ,ŷ)} q(ẑ, ŷ) r(ŷ, y*) ∇ log π(ẑ, ŷ | x; θ_at)`: the exact filtered
/// expectation that a single-sample update estimates.
pub fn exact_filtered_grad(
    params_at: &PolicyParams,
    scheme: &SchemeSpec,
    params_q: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
) -> Result<Vec<f64>> {
    if params_at.vocab() != shape.vocab {
        return Err(contract("parameter vocab does not match shape"));
    }
    let mut g = vec![0.0; params_at.len()];
    for (z, y, q) in scheme_law(scheme, params_q, shape, dp)? {
        let r = f64::from(reward(y, dp.y_star));
        if q == 0.0 || r == 0.0 {
            continue;
        }
        accumulate_grad_unchecked(params_at, shape, &dp.x, &z, y, q * r, &mut g);
    }
    Ok(g)
}

/// `∇_θ E_{z ~ π(·|x, y*; θ_post)}[log π(z, y* | x; θ)]` at `θ = params_at`,
/// computed directly from the posterior without any reward.
pub fn em_objective_grad(
    params_at: &PolicyParams,
    params_post: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params_at.len()];
    for (z, w) in exact_posterior(params_post, shape, &dp.x, dp.y_star)? {
        accumulate_grad_unchecked(params_at, shape, &dp.x, &z, dp.y_star, w, &mut g);
    }
    Ok(g)
}

/// Exact evaluation of both sides of the reward lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Report {
    /// `E_q[r log π(ẑ, ŷ | x; θ)] + C`.
    pub lhs_plus_c: f64,
    /// `E_π[r]`.
    pub rhs: f64,
    /// `E_q[r (1 - log q)]`.
    pub c: f64,
    pub holds: bool,
    /// `rhs - lhs_plus_c`.
    pub gap: f64,
}

pub const LEMMA1_TOLERANCE: f64 = 1e-9;

/// Checks `E_π[r] ≥ E_q[r log π] + C` for one datapoint by enumeration.
pub fn check_lemma1(
    theta: &PolicyParams,
    scheme: &SchemeSpec,
    params_q: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
) -> Result<Lemma1Report> {
    let rhs = enumerate_joint(theta, shape, &dp.x)?.marginal(dp.y_star);
    let mut lhs = 0.0;
    let mut c = 0.0;
    for (z, y, q) in scheme_law(scheme, params_q, shape, dp)? {
        if q == 0.0 || reward(y, dp.y_star) == 0 {
            continue;
        }
        lhs += q * log_joint_unchecked(theta, shape, &dp.x, &z, y);
        c += q * (1.0 - q.ln());
    }
    let lhs_plus_c = lhs + c;
    let gap = rhs - lhs_plus_c;
    Ok(Lemma1Report {
        lhs_plus_c,
        rhs,
        c,
        holds: gap >= -LEMMA1_TOLERANCE,
        gap,
    })
}

#[derive(Clone, Debug)]
pub struct EmStepReport {
    pub params: PolicyParams,
    pub j_before: f64,
    pub j_after: f64,
    pub marginal_before: f64,
    pub marginal_after: f64,
}

/// `J(θ) = Σ_i Σ_z post_i(z) log π(z, y_i* | x_i; θ)`.
fn em_objective(theta: &PolicyParams, shape: &TaskShape, data: &[Datapoint], posts: &[Vec<(Rationale, f64)>]) -> f64 {
    data.iter()
        .zip(posts)
        .map(|(dp, post)| {
            post.iter()
                .map(|(z, w)| w * path_probability(theta, shape, &dp.x, z, dp.y_star).ln())
                .sum::<f64>()
        })
        .sum()
}

/// `Σ_i log P(y_i* | x_i; θ)` by enumeration.
pub fn enumerated_marginal_loglik(theta: &PolicyParams, shape: &TaskShape, data: &[Datapoint]) -> Result<f64> {
    data.iter()
        .map(|dp| Ok(enumerate_joint(theta, shape, &dp.x)?.marginal(dp.y_star).ln()))
        .sum()
}

/// One generalized EM step: exact posteriors at `params`, then `inner_steps`
/// of gradient ascent on the exact `J`.
pub fn exact_em_step(
    params: &PolicyParams,
    shape: &TaskShape,
    data: &[Datapoint],
    inner_steps: usize,
    inner_lr: f64,
) -> Result<EmStepReport> {
    let posts = data
        .iter()
        .map(|dp| exact_posterior(params, shape, &dp.x, dp.y_star))
        .collect::<Result<Vec<_>>>()?;
    let j_before = em_objective(params, shape, data, &posts);
    let marginal_before = enumerated_marginal_loglik(params, shape, data)?;

    let mut theta = params.clone();
    let mut grad = vec![0.0; theta.len()];
    for _ in 0..inner_steps {
        grad.fill(0.0);
        for (dp, post) in data.iter().zip(&posts) {
            for (z, w) in post {
                accumulate_grad_unchecked(&theta, shape, &dp.x, z, dp.y_star, *w, &mut grad);
            }
        }
        theta.add_scaled(&grad, inner_lr);
    }
    if inner_steps == 0 {
        return Ok(EmStepReport {
            params: theta,
            j_before,
            j_after: j_before,
            marginal_before,
            marginal_after: marginal_before,
        });
    }
    Ok(EmStepReport {
        j_after: em_objective(&theta, shape, data, &posts),
        marginal_after: enumerated_marginal_loglik(&theta, shape, data)?,
        params: theta,
        j_before,
        marginal_before,
    })
}

/// Central differences of `log π(z, y | x; θ)` in every coordinate.
pub fn fd_gradient(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    z: &Rationale,
    y: Answer,
    h: f64,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(contract("finite-difference step must be positive"));
    }
    // validates the triple once
    crate::seqmodel::log_joint(params, shape, x, z, y)?;
    let mut p = params.clone();
    let mut g = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let orig = p.as_slice()[j];
        p.as_mut_slice()[j] = orig + h;
        let up = log_joint_unchecked(&p, shape, x, z, y);
        p.as_mut_slice()[j] = orig - h;
        let down = log_joint_unchecked(&p, shape, x, z, y);
        p.as_mut_slice()[j] = orig;
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests;
