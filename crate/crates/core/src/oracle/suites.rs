//! Named verification suites.
//!
//! Each suite returns one [`CheckLine`] per check. Instance seeds are derived
//! from the suite seed so any single line can be reproduced in isolation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{
    check_lemma1, em_objective, em_objective_grad, enumerate_joint, exact_em_step, exact_filtered_grad, exact_posterior, fd_gradient,
    rel_error,
};
use crate::error::{contract, Error, Result};
use crate::rng::{derive_seed, stream, Domain, LabRng};
use crate::samplers::{compute_messages, draw, posterior_path_log_prob, SchemeSpec};
use crate::seqmodel::{grad_log_joint, sample_rollout, PolicyParams, Question, TaskShape};
use crate::taskgen::{generate_dataset, Datapoint};

pub const NORMALIZATION_TOL: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;
pub const POSTERIOR_PATH_TOL: f64 = 1e-9;
pub const POSTERIOR_MARGINAL_TOL: f64 = 1e-10;
pub const LEMMA1_TIGHTNESS_TOL: f64 = 1e-9;
pub const EQ_CHAIN_TOL: f64 = 1e-10;
pub const MC_Z_LIMIT: f64 = 4.0;
pub const MC_DRAWS: usize = 100_000;
pub const GEM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub check: String,
    pub seed: u64,
    pub measured: f64,
    pub threshold: f64,
    pub relation: Relation,
}

impl CheckLine {
    fn at_most(check: impl Into<String>, seed: u64, measured: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            seed,
            measured,
            threshold,
            relation: Relation::AtMost,
        }
    }

    fn at_least(check: impl Into<String>, seed: u64, measured: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            seed,
            measured,
            threshold,
            relation: Relation::AtLeast,
        }
    }

    pub fn passed(&self) -> bool {
        match self.relation {
            Relation::AtMost => self.measured <= self.threshold,
            Relation::AtLeast => self.measured >= self.threshold,
        }
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        write!(
            f,
            "{:<28} seed={:<20} measured={:>+.3e} threshold{}{:+.1e} {}",
            self.check,
            self.seed,
            self.measured,
            rel,
            self.threshold,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    Normalization,
    Gradients,
    Posterior,
    Lemma1,
    Em,
    Unbiasedness,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "normalization" => Suite::Normalization,
            "gradients" => Suite::Gradients,
            "posterior" => Suite::Posterior,
            "lemma1" => Suite::Lemma1,
            "em" => Suite::Em,
            "unbiasedness" => Suite::Unbiasedness,
            other => return Err(contract(format!("unknown suite `{other}`"))),
        })
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckLine>> {
    Ok(match suite {
        Suite::Normalization => normalization(seed)?,
        Suite::Gradients => gradients(seed)?,
        Suite::Posterior => posterior(seed)?,
        Suite::Lemma1 => lemma1(seed)?,
        Suite::Em => em(seed)?,
        Suite::Unbiasedness => unbiasedness(seed, MC_DRAWS)?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [
                Suite::Normalization,
                Suite::Gradients,
                Suite::Posterior,
                Suite::Lemma1,
                Suite::Em,
                Suite::Unbiasedness,
            ] {
                all.extend(run_suite(s, seed)?);
            }
            all
        }
    })
}

/// A random small instance: shape with `v ≤ 3`, `n ≤ 3`, `L_max ≤ 3`,
/// logits uniform in `[-2, 2]` and a uniform question.
pub struct Instance {
    pub seed: u64,
    pub shape: TaskShape,
    pub params: PolicyParams,
    pub x: Question,
    pub rng: LabRng,
}

pub fn instance(suite_seed: u64, index: u64) -> Instance {
    let seed = derive_seed(suite_seed, Domain::Verify, index);
    let mut rng = stream(seed, Domain::Verify, 0, 0);
    let shape = TaskShape {
        vocab: rng.gen_range(2..=3),
        question_len: rng.gen_range(1..=3),
        max_len: rng.gen_range(1..=3),
        variable_length: rng.gen_bool(0.75),
    };
    let params = PolicyParams::random(shape.vocab, 2.0, &mut rng);
    let x = Question((0..shape.question_len).map(|_| rng.gen_range(0..shape.vocab)).collect());
    Instance {
        seed,
        shape,
        params,
        x,
        rng,
    }
}

/// Enumerated joint sums to one on 20 random instances.
pub fn normalization(seed: u64) -> Result<Vec<CheckLine>> {
    (0..20)
        .map(|i| {
            let inst = instance(seed, i);
            let joint = enumerate_joint(&inst.params, &inst.shape, &inst.x)?;
            Ok(CheckLine::at_most("normalization", inst.seed, (joint.total - 1.0).abs(), NORMALIZATION_TOL))
        })
        .collect()
}

/// Analytic score function against central differences on 20 random instances.
pub fn gradients(seed: u64) -> Result<Vec<CheckLine>> {
    (0..20)
        .map(|i| {
            let mut inst = instance(seed, 1000 + i);
            let (z, y) = sample_rollout(&inst.params, &inst.shape, &inst.x, &mut inst.rng)?;
            let analytic = grad_log_joint(&inst.params, &inst.shape, &inst.x, &z, y)?;
            let numeric = fd_gradient(&inst.params, &inst.shape, &inst.x, &z, y, FD_STEP)?;
            let worst = analytic
                .iter()
                .zip(&numeric)
                .map(|(&a, &b)| rel_error(a, b))
                .fold(0.0, f64::max);
            Ok(CheckLine::at_most("gradient_fd_rel_error", inst.seed, worst, FD_REL_TOL))
        })
        .collect()
}

/// Backward-message sampler against the enumerated posterior, plus posterior
/// consistency of actual draws.
pub fn posterior(seed: u64) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let mut misses = 0usize;
    for i in 0..20 {
        let mut inst = instance(seed, 2000 + i);
        let y_star = crate::seqmodel::Answer(inst.rng.gen_range(0..inst.shape.vocab));
        let msgs = compute_messages(&inst.params, &inst.shape, &inst.x, y_star)?;
        let joint = enumerate_joint(&inst.params, &inst.shape, &inst.x)?;
        let marginal_err = (msgs.log_marginal().exp() - joint.marginal(y_star)).abs();
        let mut worst = 0.0f64;
        for (z, p) in exact_posterior(&inst.params, &inst.shape, &inst.x, y_star)? {
            let tilted = posterior_path_log_prob(&inst.params, &inst.shape, &inst.x, &msgs, &z)?.exp();
            worst = worst.max((tilted - p).abs());
        }
        lines.push(CheckLine::at_most("posterior_path_abs_error", inst.seed, worst, POSTERIOR_PATH_TOL));
        lines.push(CheckLine::at_most("posterior_marginal_abs_error", inst.seed, marginal_err, POSTERIOR_MARGINAL_TOL));

        let dp = Datapoint { x: inst.x.clone(), y_star };
        for k in 0..500 {
            let rec = draw(&SchemeSpec::ExactPosterior, &inst.params, &inst.shape, &dp, k, &mut inst.rng)?;
            misses += usize::from(rec.y_hat != y_star);
        }
    }
    lines.push(CheckLine::at_most("posterior_consistency_misses", seed, misses as f64, 0.0));
    Ok(lines)
}

/// Lower bound on 100 instances with `q` the exact posterior at a perturbed
/// `θ'`, plus the tightness case `q ≡ π(·|x; θ)`.
pub fn lemma1(seed: u64) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    let mut c_min = (f64::INFINITY, 0);
    for i in 0..100 {
        let mut inst = instance(seed, 3000 + i);
        let mut theta_q = inst.params.clone();
        for p in theta_q.as_mut_slice() {
            *p += inst.rng.gen_range(-1.0..=1.0);
        }
        let dp = Datapoint {
            x: inst.x.clone(),
            y_star: crate::seqmodel::Answer(inst.rng.gen_range(0..inst.shape.vocab)),
        };
        let report = check_lemma1(&inst.params, &SchemeSpec::ExactPosterior, &theta_q, &inst.shape, &dp)?;
        lines.push(CheckLine::at_least("lemma1_gap", inst.seed, report.gap, -super::LEMMA1_TOLERANCE));
        if report.c < c_min.0 {
            c_min = (report.c, inst.seed);
        }
    }
    let inst = instance(seed, 3999);
    let dp = Datapoint::from_question(inst.x.clone(), inst.shape.vocab);
    let report = check_lemma1(&inst.params, &SchemeSpec::Rs { budget: 1 }, &inst.params, &inst.shape, &dp)?;
    lines.push(CheckLine::at_most("lemma1_tightness", inst.seed, report.gap.abs(), LEMMA1_TIGHTNESS_TOL));
    lines.push(CheckLine::at_least("lemma1_c_min", c_min.1, c_min.0, 0.0));
    Ok(lines)
}

/// Generalized-EM monotonicity: 20 consecutive exact steps (10 inner steps at
/// learning rate 0.1) on `v=2, n=2, L_max=2, N=16`, for five seeds.
pub fn em(seed: u64) -> Result<Vec<CheckLine>> {
    let shape = TaskShape::new(2, 2, 2, true)?;
    (0..5)
        .map(|i| {
            let s = derive_seed(seed, Domain::Verify, 4000 + i);
            let data = generate_dataset(&shape, 16, 1, s)?;
            let mut theta = PolicyParams::random(2, 1.0, &mut stream(s, Domain::Init, 0, 0));
            let mut worst_drop = f64::NEG_INFINITY;
            for _ in 0..20 {
                let step = exact_em_step(&theta, &shape, &data.train, 10, 0.1)?;
                if step.j_after < step.j_before {
                    return Err(contract("inner ascent decreased the EM objective"));
                }
                worst_drop = worst_drop.max(step.marginal_before - step.marginal_after);
                theta = step.params;
            }
            Ok(CheckLine::at_most("gem_max_marginal_drop", s, worst_drop, GEM_TOL))
        })
        .collect()
}

/// Eq.-chain identity and Monte-Carlo unbiasedness of single-sample filtered
/// updates, measured as the largest per-coordinate z-score.
pub fn unbiasedness(seed: u64, draws: usize) -> Result<Vec<CheckLine>> {
    let shape = TaskShape::new(3, 2, 2, true)?;
    let s = derive_seed(seed, Domain::Verify, 5000);
    let mut rng = stream(s, Domain::Verify, 0, 0);
    let theta_q = PolicyParams::random(3, 1.5, &mut rng);
    let mut theta_at = theta_q.clone();
    for p in theta_at.as_mut_slice() {
        *p += rng.gen_range(-0.5..=0.5);
    }
    let x = Question(vec![rng.gen_range(0..3), rng.gen_range(0..3)]);
    let dp = Datapoint::from_question(x, 3);

    let mut lines = Vec::new();
    let filtered = exact_filtered_grad(&theta_at, &SchemeSpec::ExactPosterior, &theta_q, &shape, &dp)?;
    let direct = em_objective_grad(&theta_at, &theta_q, &shape, &dp)?;
    let chain_err = filtered.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    lines.push(CheckLine::at_most("eq_chain_abs_error", s, chain_err, EQ_CHAIN_TOL));
    let post = exact_posterior(&theta_q, &shape, &dp.x, dp.y_star)?;
    let objective = |t: &PolicyParams| em_objective(t, &shape, std::slice::from_ref(&dp), std::slice::from_ref(&post));
    let mut fd_err: f64 = 0.0;
    for (j, g) in filtered.iter().enumerate() {
        let mut up = theta_at.clone();
        up.as_mut_slice()[j] += FD_STEP;
        let mut down = theta_at.clone();
        down.as_mut_slice()[j] -= FD_STEP;
        let fd = (objective(&up) - objective(&down)) / (2.0 * FD_STEP);
        fd_err = fd_err.max(rel_error(*g, fd));
    }
    lines.push(CheckLine::at_most("eq_chain_fd_rel_error", s, fd_err, FD_REL_TOL));

    let schemes = [
        SchemeSpec::Rs { budget: 1 },
        SchemeSpec::Rs { budget: 3 },
        SchemeSpec::Pps { fidelity: 0.1 },
        SchemeSpec::Star { fidelity: 0.1 },
        SchemeSpec::ExactPosterior,
    ];
    for (k, scheme) in schemes.iter().enumerate() {
        let exact = exact_filtered_grad(&theta_at, scheme, &theta_q, &shape, &dp)?;
        let z = mc_max_z_score(&theta_at, scheme, &theta_q, &shape, &dp, &exact, draws, derive_seed(s, Domain::Sampling, k as u64))?;
        lines.push(CheckLine::at_most(format!("mc_unbiased[{scheme}]"), s, z, MC_Z_LIMIT));
    }
    Ok(lines)
}

/// Largest `|mean - exact| / SE` over coordinates, with SE floored at 1e-12
/// for coordinates whose estimate never varies.
#[allow(clippy::too_many_arguments)]
pub fn mc_max_z_score(
    theta_at: &PolicyParams,
    scheme: &SchemeSpec,
    theta_q: &PolicyParams,
    shape: &TaskShape,
    dp: &Datapoint,
    exact: &[f64],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let dim = theta_at.len();
    let mut rng = stream(seed, Domain::Sampling, 0, 0);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for i in 0..draws {
        let rec = draw(scheme, theta_q, shape, dp, i, &mut rng)?;
        g.fill(0.0);
        if rec.reward == 1 {
            crate::seqmodel::accumulate_grad_log_joint(theta_at, shape, &dp.x, &rec.z_hat, rec.y_hat, 1.0, &mut g)?;
        }
        for j in 0..dim {
            sum[j] += g[j];
            sum_sq[j] += g[j] * g[j];
        }
    }
    let n = draws as f64;
    let mut worst = 0.0f64;
    for j in 0..dim {
        let mean = sum[j] / n;
        let var = (sum_sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
        let se = (var / n).sqrt().max(1e-12);
        worst = worst.max((mean - exact[j]).abs() / se);
    }
    Ok(worst)
}
