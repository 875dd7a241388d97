//! Tabular autoregressive policy over rationales and answers.
//!
//! A question `x` of `n` tokens is read cyclically while the policy emits a
//! rationale `z` one token at a time. Each step is a softmax over the
//! alphabet plus a STOP symbol, conditioned on the previous rationale token
//! (or BOS) and on the question token `x[(t - 1) mod n]`. After the rationale
//! the answer is drawn from a softmax conditioned on the last rationale token.
//!
//! STOP is masked at the first step, masked everywhere when rationales have a
//! fixed length, and forced (with probability one, contributing nothing to the
//! likelihood or its gradient) after `max_len` tokens.

mod checkpoint;

pub use checkpoint::{parse_checkpoint, read_checkpoint, render_checkpoint, write_checkpoint};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numeric::{argmax, sample_log_weights};

pub type Token = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskShape {
    /// Alphabet size `v`; tokens are `0..v`.
    pub vocab: usize,
    /// Question length `n`.
    pub question_len: usize,
    /// Maximum rationale length `L_max`.
    pub max_len: usize,
    /// When false every rationale has exactly `max_len` tokens.
    pub variable_length: bool,
}

impl Default for TaskShape {
    fn default() -> Self {
        Self {
            vocab: 5,
            question_len: 4,
            max_len: 6,
            variable_length: true,
        }
    }
}

impl TaskShape {
    pub fn new(vocab: usize, question_len: usize, max_len: usize, variable_length: bool) -> Result<Self> {
        let shape = Self {
            vocab,
            question_len,
            max_len,
            variable_length,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(contract(format!("vocab must be >= 2, got {}", self.vocab)));
        }
        if self.question_len < 1 {
            return Err(contract("question_len must be >= 1"));
        }
        if self.max_len < 1 {
            return Err(contract("max_len must be >= 1"));
        }
        Ok(())
    }

    /// Index used for BOS in the `prev` axis and for STOP in the `next` axis.
    #[inline]
    pub fn sentinel(&self) -> usize {
        self.vocab
    }

    /// Question token consulted at step `t` (1-based).
    #[inline]
    pub fn feature(&self, x: &Question, t: usize) -> Token {
        x.0[(t - 1) % self.question_len]
    }

    pub fn param_count(&self) -> usize {
        PolicyParams::len_for(self.vocab)
    }

    /// Admissible rationale lengths.
    pub fn lengths(&self) -> std::ops::RangeInclusive<usize> {
        if self.variable_length {
            1..=self.max_len
        } else {
            self.max_len..=self.max_len
        }
    }

    /// Number of `(z, y)` pairs, saturating rather than overflowing.
    pub fn outcome_count(&self) -> u128 {
        let v = self.vocab as u128;
        self.lengths()
            .map(|l| v.saturating_pow(l as u32))
            .fold(0u128, |acc, n| acc.saturating_add(n))
            .saturating_mul(v)
    }

    pub fn step_kind(&self, t: usize) -> StepKind {
        if t == self.max_len + 1 {
            StepKind::ForcedStop
        } else if t == 1 || !self.variable_length {
            StepKind::StopMasked
        } else {
            StepKind::Free
        }
    }

    pub(crate) fn check_question(&self, x: &Question) -> Result<()> {
        if x.0.len() != self.question_len {
            return Err(contract(format!(
                "question has {} tokens, shape expects {}",
                x.0.len(),
                self.question_len
            )));
        }
        self.check_tokens(&x.0, "question")
    }

    pub(crate) fn check_rationale(&self, z: &Rationale) -> Result<()> {
        let len = z.0.len();
        if !self.lengths().contains(&len) {
            return Err(contract(format!(
                "rationale length {len} outside {:?}",
                self.lengths()
            )));
        }
        self.check_tokens(&z.0, "rationale")
    }

    pub(crate) fn check_answer(&self, y: Answer) -> Result<()> {
        if y.0 >= self.vocab {
            return Err(contract(format!("answer token {} >= vocab {}", y.0, self.vocab)));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[Token], what: &str) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab) {
            Some(t) => Err(contract(format!("{what} token {t} >= vocab {}", self.vocab))),
            None => Ok(()),
        }
    }
}

/// How STOP is treated at a given step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Free,
    StopMasked,
    ForcedStop,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question(pub Vec<Token>);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rationale(pub Vec<Token>);

impl Rationale {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Token {
        *self.0.last().expect("rationales are never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Answer(pub Token);

/// Conditioning state for a rationale step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prev {
    Bos,
    Token(Token),
}

impl Prev {
    fn index(self, vocab: usize) -> usize {
        match self {
            Prev::Bos => vocab,
            Prev::Token(t) => t,
        }
    }
}

/// Natural log of a probability.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogProb(pub f64);

impl LogProb {
    pub fn prob(self) -> f64 {
        self.0.exp()
    }
}

/// Policy parameters: a `(v+1) x v x (v+1)` transition-logit table followed by
/// a `v x v` answer-logit table, stored flat in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    vocab: usize,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn len_for(vocab: usize) -> usize {
        (vocab + 1) * vocab * (vocab + 1) + vocab * vocab
    }

    pub fn zeros(vocab: usize) -> Self {
        Self {
            vocab,
            values: vec![0.0; Self::len_for(vocab)],
        }
    }

    pub fn from_flat(vocab: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::len_for(vocab) {
            return Err(contract(format!(
                "expected {} parameters for vocab {vocab}, got {}",
                Self::len_for(vocab),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(contract(format!("parameter {i} is not finite")));
        }
        Ok(Self { vocab, values })
    }

    /// Independent uniform logits in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(vocab: usize, scale: f64, rng: &mut R) -> Self {
        let values = (0..Self::len_for(vocab))
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 })
            .collect();
        Self { vocab, values }
    }

    /// The prefix-sum policy: from `prev = a` reading `b` it emits `(a + b) mod v`
    /// (BOS acts as 0), never stops voluntarily, and answers with its last token.
    /// Chosen logits are `+magnitude`, all others `-magnitude`.
    ///
    /// Its greedy decode is exact whenever `max_len == question_len`.
    pub fn prefix_sum(shape: &TaskShape, magnitude: f64) -> Self {
        let v = shape.vocab;
        let mut p = Self {
            vocab: v,
            values: vec![-magnitude; Self::len_for(v)],
        };
        for prev in 0..=v {
            let a = if prev == v { 0 } else { prev };
            for feat in 0..v {
                let off = p.transition_offset(prev, feat);
                p.values[off + (a + feat) % v] = magnitude;
            }
        }
        for last in 0..v {
            let off = p.answer_offset(last);
            p.values[off + last] = magnitude;
        }
        p
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Offset of the transition row `[prev][feat][·]`; `prev == vocab` is BOS.
    #[inline]
    pub fn transition_offset(&self, prev: usize, feat: Token) -> usize {
        (prev * self.vocab + feat) * (self.vocab + 1)
    }

    /// Offset of the answer row `[last][·]`.
    #[inline]
    pub fn answer_offset(&self, last: Token) -> usize {
        (self.vocab + 1) * self.vocab * (self.vocab + 1) + last * self.vocab
    }

    pub fn transition_row(&self, prev: Prev, feat: Token) -> &[f64] {
        let off = self.transition_offset(prev.index(self.vocab), feat);
        &self.values[off..off + self.vocab + 1]
    }

    pub fn answer_row(&self, last: Token) -> &[f64] {
        let off = self.answer_offset(last);
        &self.values[off..off + self.vocab]
    }

    /// `self += scale * delta`.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        debug_assert_eq!(delta.len(), self.values.len());
        for (p, d) in self.values.iter_mut().zip(delta) {
            *p += scale * d;
        }
    }

    fn check_shape(&self, shape: &TaskShape) -> Result<()> {
        if self.vocab != shape.vocab {
            return Err(contract(format!(
                "parameters are for vocab {}, shape has vocab {}",
                self.vocab, shape.vocab
            )));
        }
        Ok(())
    }

    // ---- step-level primitives (no validation) ----

    /// Masked log-softmax of the step distribution at step `t` into `out`
    /// (`v + 1` entries, STOP last). Masked entries are `-inf`.
    pub(crate) fn step_log_probs_into(
        &self,
        shape: &TaskShape,
        prev: usize,
        feat: Token,
        t: usize,
        out: &mut [f64],
    ) {
        let v = self.vocab;
        let kind = shape.step_kind(t);
        if kind == StepKind::ForcedStop {
            out[..v].fill(f64::NEG_INFINITY);
            out[v] = 0.0;
            return;
        }
        let off = self.transition_offset(prev, feat);
        let row = &self.values[off..off + v + 1];
        let live = if kind == StepKind::StopMasked { v } else { v + 1 };
        let max = row[..live].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row[..live].iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        for (o, &l) in out[..live].iter_mut().zip(row) {
            *o = l - lse;
        }
        if live == v {
            out[v] = f64::NEG_INFINITY;
        }
    }

    /// Log-softmax of the answer row for `last` into `out` (`v` entries).
    pub(crate) fn answer_log_probs_into(&self, last: Token, out: &mut [f64]) {
        let row = self.answer_row(last);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        for (o, &l) in out.iter_mut().zip(row) {
            *o = l - lse;
        }
    }

    pub(crate) fn answer_log_prob(&self, last: Token, y: Token) -> f64 {
        let row = self.answer_row(last);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        row[y] - (max + sum.ln())
    }
}

/// Probability vector over `{0..v-1} ∪ {STOP}` for step `t` (1-based).
pub fn step_distribution(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    prev: Prev,
    t: usize,
) -> Result<Vec<f64>> {
    params.check_shape(shape)?;
    shape.check_question(x)?;
    if t == 0 || t > shape.max_len + 1 {
        return Err(contract(format!(
            "step {t} outside 1..={}",
            shape.max_len + 1
        )));
    }
    match prev {
        Prev::Bos if t != 1 => return Err(contract(format!("BOS is only valid at step 1, got step {t}"))),
        Prev::Token(_) if t == 1 => return Err(contract("step 1 must condition on BOS")),
        Prev::Token(c) if c >= shape.vocab => {
            return Err(contract(format!("prev token {c} >= vocab {}", shape.vocab)))
        }
        _ => {}
    }
    let mut lp = vec![0.0; shape.vocab + 1];
    params.step_log_probs_into(shape, prev.index(shape.vocab), shape.feature(x, t), t, &mut lp);
    Ok(lp.into_iter().map(f64::exp).collect())
}

/// Probability vector over answers given the last rationale token.
pub fn answer_distribution(params: &PolicyParams, last: Token) -> Result<Vec<f64>> {
    if last >= params.vocab {
        return Err(contract(format!("last token {last} >= vocab {}", params.vocab)));
    }
    let mut lp = vec![0.0; params.vocab];
    params.answer_log_probs_into(last, &mut lp);
    Ok(lp.into_iter().map(f64::exp).collect())
}

fn check_triple(params: &PolicyParams, shape: &TaskShape, x: &Question, z: &Rationale, y: Answer) -> Result<()> {
    params.check_shape(shape)?;
    shape.check_question(x)?;
    shape.check_rationale(z)?;
    shape.check_answer(y)
}

/// Visits every softmax draw made when generating `(z, y)`:
/// `f(row_offset, live_width, log_probs, chosen)`. Forced stops are skipped.
fn for_each_draw<F>(params: &PolicyParams, shape: &TaskShape, x: &Question, z: &Rationale, y: Answer, mut f: F)
where
    F: FnMut(usize, usize, &[f64], usize),
{
    let v = shape.vocab;
    let mut lp = vec![0.0; v + 1];
    let mut prev = v;
    for (i, &tok) in z.0.iter().enumerate() {
        let t = i + 1;
        let feat = shape.feature(x, t);
        params.step_log_probs_into(shape, prev, feat, t, &mut lp);
        f(params.transition_offset(prev, feat), v + 1, &lp, tok);
        prev = tok;
    }
    let t = z.len() + 1;
    if shape.step_kind(t) == StepKind::Free {
        let feat = shape.feature(x, t);
        params.step_log_probs_into(shape, prev, feat, t, &mut lp);
        f(params.transition_offset(prev, feat), v + 1, &lp, v);
    }
    params.answer_log_probs_into(prev, &mut lp[..v]);
    f(params.answer_offset(prev), v, &lp[..v], y.0);
}

pub(crate) fn log_joint_unchecked(params: &PolicyParams, shape: &TaskShape, x: &Question, z: &Rationale, y: Answer) -> f64 {
    let mut total = 0.0;
    for_each_draw(params, shape, x, z, y, |_, _, lp, chosen| total += lp[chosen]);
    total
}

/// `log π(z, y | x; θ)`.
pub fn log_joint(params: &PolicyParams, shape: &TaskShape, x: &Question, z: &Rationale, y: Answer) -> Result<LogProb> {
    check_triple(params, shape, x, z, y)?;
    Ok(LogProb(log_joint_unchecked(params, shape, x, z, y)))
}

/// Adds `scale * ∇ log π(z, y | x; θ)` into `out`.
pub(crate) fn accumulate_grad_unchecked(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    z: &Rationale,
    y: Answer,
    scale: f64,
    out: &mut [f64],
) {
    for_each_draw(params, shape, x, z, y, |off, width, lp, chosen| {
        for (j, &l) in lp[..width].iter().enumerate() {
            if l == f64::NEG_INFINITY {
                continue;
            }
            let indicator = if j == chosen { 1.0 } else { 0.0 };
            out[off + j] += scale * (indicator - l.exp());
        }
    });
}

/// Adds `scale * ∇ log π(z, y | x; θ)` into `out` after validating inputs.
pub fn accumulate_grad_log_joint(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    z: &Rationale,
    y: Answer,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    check_triple(params, shape, x, z, y)?;
    if out.len() != params.len() {
        return Err(contract("gradient buffer has the wrong length"));
    }
    accumulate_grad_unchecked(params, shape, x, z, y, scale, out);
    Ok(())
}

/// Score function `∇ log π(z, y | x; θ)` in the flat parameter layout.
pub fn grad_log_joint(params: &PolicyParams, shape: &TaskShape, x: &Question, z: &Rationale, y: Answer) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.len()];
    accumulate_grad_log_joint(params, shape, x, z, y, 1.0, &mut g)?;
    Ok(g)
}

pub(crate) fn sample_rollout_unchecked<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    rng: &mut R,
) -> (Rationale, Answer) {
    let v = shape.vocab;
    let mut lp = vec![0.0; v + 1];
    let mut z = Vec::with_capacity(shape.max_len);
    let mut prev = v;
    for t in 1..=shape.max_len {
        params.step_log_probs_into(shape, prev, shape.feature(x, t), t, &mut lp);
        let next = sample_log_weights(&lp, rng).expect("step distribution has live entries");
        if next == v {
            break;
        }
        z.push(next);
        prev = next;
    }
    params.answer_log_probs_into(prev, &mut lp[..v]);
    let y = sample_log_weights(&lp[..v], rng).expect("answer distribution has live entries");
    (Rationale(z), Answer(y))
}

/// Ancestral sample `(ẑ, ŷ) ~ π(· | x; θ)`.
pub fn sample_rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    shape: &TaskShape,
    x: &Question,
    rng: &mut R,
) -> Result<(Rationale, Answer)> {
    params.check_shape(shape)?;
    shape.check_question(x)?;
    Ok(sample_rollout_unchecked(params, shape, x, rng))
}

pub(crate) fn greedy_decode_unchecked(params: &PolicyParams, shape: &TaskShape, x: &Question) -> (Rationale, Answer) {
    let v = shape.vocab;
    let mut lp = vec![0.0; v + 1];
    let mut z = Vec::with_capacity(shape.max_len);
    let mut prev = v;
    for t in 1..=shape.max_len {
        params.step_log_probs_into(shape, prev, shape.feature(x, t), t, &mut lp);
        let next = argmax(&lp);
        if next == v {
            break;
        }
        z.push(next);
        prev = next;
    }
    params.answer_log_probs_into(prev, &mut lp[..v]);
    (Rationale(z), Answer(argmax(&lp[..v])))
}

/// Stepwise argmax decode; ties go to the smallest token id (STOP is the largest).
pub fn greedy_decode(params: &PolicyParams, shape: &TaskShape, x: &Question) -> Result<(Rationale, Answer)> {
    params.check_shape(shape)?;
    shape.check_question(x)?;
    Ok(greedy_decode_unchecked(params, shape, x))
}
