//! Exact and approximate inference over a [`FactorModel`].
//!
//! Small models are handled by brute-force enumeration of the discrete
//! state space — the correctness oracle everything else is validated
//! against. Larger models fall back to systematic-scan Gibbs sampling with
//! per-site categorical full conditionals. Both paths produce per-data-point
//! posterior distributions over the desired labels.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, IlfOutputMatrix};
use crate::graph::RelationType;
use crate::model::{Assignment, FactorModel, ModelError};

/// Default cap on enumerated `(Y, Ybar)` states for conditional queries.
pub const DEFAULT_CONDITIONAL_BUDGET: usize = 1 << 21;
/// Default cap on enumerated `(Y, Ybar, lambda)` states for joint queries.
pub const DEFAULT_JOINT_BUDGET: usize = 1 << 23;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnumerationBudget {
    pub conditional_states: usize,
    pub joint_states: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            conditional_states: DEFAULT_CONDITIONAL_BUDGET,
            joint_states: DEFAULT_JOINT_BUDGET,
        }
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("state space has {states} configurations, budget is {budget}")]
    BudgetExceeded { states: u128, budget: usize },
    #[error("sweeps ({sweeps}) must exceed burn-in ({burn_in})")]
    InvalidSweeps { sweeps: usize, burn_in: usize },
}

/// Number of `(Y, Ybar)` states for a clamped-lambda query. The baseline
/// model ignores the latent bits, so they collapse to a single state.
pub fn conditional_state_count(model: &FactorModel) -> u128 {
    let ybar = if model.uses_y_bar() {
        1u128 << model.seen_labels().len()
    } else {
        1
    };
    model.y_count() as u128 * ybar
}

/// Number of full `(Y, Ybar, lambda)` states.
pub fn joint_state_count(model: &FactorModel) -> u128 {
    let mut count = conditional_state_count(model);
    for dom in model.ilf_domains() {
        count = count.saturating_mul((dom.outputs.len() + dom.can_abstain as usize) as u128);
    }
    count
}

fn check_budget(states: u128, budget: usize) -> Result<usize, InferenceError> {
    if states > budget as u128 {
        Err(InferenceError::BudgetExceeded { states, budget })
    } else {
        Ok(states as usize)
    }
}

fn write_bits(bits: usize, out: &mut [bool]) {
    for (i, b) in out.iter_mut().enumerate() {
        *b = bits & (1 << i) != 0;
    }
}

/// Visits every `(Y, Ybar)` state with lambda clamped to `lambda`.
fn for_each_conditional_state(
    model: &FactorModel,
    lambda: &[Option<usize>],
    mut f: impl FnMut(usize, usize, &Assignment),
) {
    let ybar_count = if model.uses_y_bar() { 1usize << model.seen_labels().len() } else { 1 };
    let mut scratch = Assignment {
        y: model.y_value(0),
        y_bar: vec![false; model.seen_labels().len()],
        lambda: lambda.to_vec(),
    };
    for y_idx in 0..model.y_count() {
        scratch.y = model.y_value(y_idx);
        for bits in 0..ybar_count {
            write_bits(bits, &mut scratch.y_bar);
            f(y_idx, bits, &scratch);
        }
    }
}

/// Visits every full joint state. Lambda digits run fastest, each ILF over
/// its output space in ascending order with abstention last.
fn for_each_joint_state(model: &FactorModel, mut f: impl FnMut(&Assignment)) {
    let n = model.ilf_domains().len();
    let digits: Vec<usize> = model
        .ilf_domains()
        .iter()
        .map(|d| d.outputs.len() + d.can_abstain as usize)
        .collect();
    let ybar_count = if model.uses_y_bar() { 1usize << model.seen_labels().len() } else { 1 };
    let mut scratch = Assignment {
        y: model.y_value(0),
        y_bar: vec![false; model.seen_labels().len()],
        lambda: vec![None; n],
    };
    for y_idx in 0..model.y_count() {
        scratch.y = model.y_value(y_idx);
        for bits in 0..ybar_count {
            write_bits(bits, &mut scratch.y_bar);
            let mut digit = vec![0usize; n];
            loop {
                for j in 0..n {
                    let dom = &model.ilf_domains()[j];
                    scratch.lambda[j] = dom.outputs.get(digit[j]).copied();
                }
                f(&scratch);
                // odometer
                let mut j = 0;
                loop {
                    if j == n {
                        break;
                    }
                    digit[j] += 1;
                    if digit[j] < digits[j] {
                        break;
                    }
                    digit[j] = 0;
                    j += 1;
                }
                if j == n {
                    break;
                }
            }
        }
    }
}

/// Log-score evaluator for clamped-lambda states, decomposed so one state
/// costs `O(k_hat^2 + k * k_hat)` instead of a full pass over the factors:
/// `score(y, bits) = per_y[y] + sum_s bits_s (per_bit[s] + per_y_bit[y][s])
/// + sum_(s<t) bits_s bits_t quad[s][t]`.
struct CondScorer {
    per_y: Vec<f64>,
    per_bit: Vec<f64>,
    per_y_bit: Vec<Vec<f64>>,
    quad: Vec<(usize, usize, f64)>,
}

impl CondScorer {
    fn new(model: &FactorModel, lambda: &[Option<usize>]) -> Self {
        use crate::model::Dependency::*;
        let y_count = model.y_count();
        let k_hat = model.seen_labels().len();
        let mut per_y = vec![0.0; y_count];
        let mut per_bit = vec![0.0; k_hat];
        let mut per_y_bit = vec![vec![0.0; k_hat]; y_count];
        let mut quad = Vec::new();
        for (dep, &w) in model.dependencies().iter().zip(model.theta()) {
            match *dep {
                PseudoAccuracy { desired, seen, ilf } => {
                    if lambda[ilf] == Some(seen) {
                        per_y[desired] += w;
                    }
                }
                Accuracy { seen, ilf } => {
                    if lambda[ilf] == Some(seen) {
                        per_bit[seen] += w;
                    }
                }
                SeenSeenRelation { a, b, relation } => match relation {
                    RelationType::Exclusive => quad.push((a, b, -w)),
                    RelationType::Overlapping => quad.push((a, b, w)),
                    // -w * (1 - bit_a) * bit_b
                    RelationType::Subsuming => {
                        per_bit[b] -= w;
                        quad.push((a, b, w));
                    }
                    // -w * bit_a * (1 - bit_b)
                    RelationType::Subsumed => {
                        per_bit[a] -= w;
                        quad.push((a, b, w));
                    }
                },
                DesiredSeenRelation { desired, seen, relation } => match relation {
                    RelationType::Exclusive => per_y_bit[desired][seen] -= w,
                    RelationType::Overlapping => per_y_bit[desired][seen] += w,
                    // -w * 1{Y != y} * bit: charge every class, refund y
                    RelationType::Subsuming => {
                        per_bit[seen] -= w;
                        per_y_bit[desired][seen] += w;
                    }
                    // -w * 1{Y = y} * (1 - bit)
                    RelationType::Subsumed => {
                        per_y[desired] -= w;
                        per_y_bit[desired][seen] += w;
                    }
                },
            }
        }
        CondScorer { per_y, per_bit, per_y_bit, quad }
    }

    /// Fills `out[y * ybar_count + bits]` with log scores.
    fn scores_into(&self, ybar_count: usize, out: &mut [f64]) {
        let y_count = self.per_y.len();
        for bits in 0..ybar_count {
            let active = |s: usize| bits & (1 << s) != 0;
            let mut base = 0.0;
            for (s, w) in self.per_bit.iter().enumerate() {
                if active(s) {
                    base += w;
                }
            }
            for &(a, b, w) in &self.quad {
                if active(a) && active(b) {
                    base += w;
                }
            }
            for y in 0..y_count {
                let mut score = base + self.per_y[y];
                for (s, w) in self.per_y_bit[y].iter().enumerate() {
                    if active(s) && *w != 0.0 {
                        score += w;
                    }
                }
                out[y * ybar_count + bits] = score;
            }
        }
    }
}

/// Exact normalized table over `(Y, Ybar)` for one observed lambda row.
#[derive(Debug, Clone)]
pub struct ExactConditional {
    pub y_count: usize,
    pub ybar_count: usize,
    /// Probabilities laid out `y * ybar_count + ybar_bits`; sums to one.
    pub probs: Vec<f64>,
    /// `log sum exp` of the unnormalized table, i.e. the log conditional
    /// weight of the observed row.
    pub log_weight: f64,
}

impl ExactConditional {
    pub fn prob(&self, y_idx: usize, ybar_bits: usize) -> f64 {
        self.probs[y_idx * self.ybar_count + ybar_bits]
    }

    /// Marginal over the latent bits: the posterior over `Y`.
    pub fn y_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.y_count];
        for y in 0..self.y_count {
            for b in 0..self.ybar_count {
                out[y] += self.prob(y, b);
            }
        }
        out
    }

    /// `P(Y | Ybar = bits, lambda)`: the table renormalized along one
    /// latent column.
    pub fn y_given_ybar(&self, ybar_bits: usize) -> Vec<f64> {
        let col: Vec<f64> = (0..self.y_count).map(|y| self.prob(y, ybar_bits)).collect();
        let total: f64 = col.iter().sum();
        col.into_iter().map(|p| p / total).collect()
    }

    /// Draws one `(y_idx, ybar_bits)` state from the table.
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, usize) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return (i / self.ybar_count, i % self.ybar_count);
            }
        }
        (self.y_count - 1, self.ybar_count - 1)
    }
}

/// Enumerates the conditional table for an observed row.
pub fn exact_posterior(
    model: &FactorModel,
    lambda: &[Option<usize>],
    budget: &EnumerationBudget,
) -> Result<ExactConditional, InferenceError> {
    let states = check_budget(conditional_state_count(model), budget.conditional_states)?;
    let ybar_count = if model.uses_y_bar() { 1usize << model.seen_labels().len() } else { 1 };
    let mut logw = vec![0.0f64; states];
    CondScorer::new(model, lambda).scores_into(ybar_count, &mut logw);
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut probs = logw;
    for w in probs.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in probs.iter_mut() {
        *w /= total;
    }
    Ok(ExactConditional {
        y_count: model.y_count(),
        ybar_count,
        probs,
        log_weight: max + total.ln(),
    })
}

/// Exact expectation of the feature vector under the full joint.
pub fn exact_joint_expectation(
    model: &FactorModel,
    budget: &EnumerationBudget,
) -> Result<Vec<f64>, InferenceError> {
    check_budget(joint_state_count(model), budget.joint_states)?;
    let mut max = f64::NEG_INFINITY;
    for_each_joint_state(model, |a| {
        let lw = model.log_unnormalized(a);
        if lw > max {
            max = lw;
        }
    });
    let m = model.dependency_count();
    let mut acc = vec![0.0f64; m];
    let mut total = 0.0f64;
    for_each_joint_state(model, |a| {
        let w = (model.log_unnormalized(a) - max).exp();
        total += w;
        for (r, dep) in model.dependencies().iter().enumerate() {
            let v = crate::model::factor_value(dep, a);
            if v != 0 {
                acc[r] += w * v as f64;
            }
        }
    });
    for v in acc.iter_mut() {
        *v /= total;
    }
    Ok(acc)
}

/// Exact expectation of the feature vector conditional on an observed row.
pub fn exact_conditional_expectation(
    model: &FactorModel,
    lambda: &[Option<usize>],
    budget: &EnumerationBudget,
) -> Result<Vec<f64>, InferenceError> {
    check_budget(conditional_state_count(model), budget.conditional_states)?;
    let mut max = f64::NEG_INFINITY;
    for_each_conditional_state(model, lambda, |_, _, a| {
        let lw = model.log_unnormalized(a);
        if lw > max {
            max = lw;
        }
    });
    let m = model.dependency_count();
    let mut acc = vec![0.0f64; m];
    let mut total = 0.0f64;
    for_each_conditional_state(model, lambda, |_, _, a| {
        let w = (model.log_unnormalized(a) - max).exp();
        total += w;
        for (r, dep) in model.dependencies().iter().enumerate() {
            let v = crate::model::factor_value(dep, a);
            if v != 0 {
                acc[r] += w * v as f64;
            }
        }
    });
    for v in acc.iter_mut() {
        *v /= total;
    }
    Ok(acc)
}

/// `log Z`: log-sum-exp over the full joint.
pub fn exact_log_partition(
    model: &FactorModel,
    budget: &EnumerationBudget,
) -> Result<f64, InferenceError> {
    check_budget(joint_state_count(model), budget.joint_states)?;
    let mut max = f64::NEG_INFINITY;
    for_each_joint_state(model, |a| {
        let lw = model.log_unnormalized(a);
        if lw > max {
            max = lw;
        }
    });
    let mut total = 0.0f64;
    for_each_joint_state(model, |a| {
        total += (model.log_unnormalized(a) - max).exp();
    });
    Ok(max + total.ln())
}

/// Materialized joint distribution, used for i.i.d. sampling of full
/// configurations from small models.
#[derive(Debug, Clone)]
pub struct ExactJoint {
    cdf: Vec<f64>,
    y_count: usize,
    ybar_count: usize,
    digits: Vec<usize>,
}

impl ExactJoint {
    pub fn state_count(&self) -> usize {
        self.cdf.len()
    }

    /// Marginal of `Y` straight off the table: each `Y` value owns one
    /// contiguous block of the flat index space.
    pub fn y_marginal(&self) -> Vec<f64> {
        let block = self.cdf.len() / self.y_count;
        (0..self.y_count)
            .map(|y| {
                let hi = self.cdf[(y + 1) * block - 1];
                let lo = if y == 0 { 0.0 } else { self.cdf[y * block - 1] };
                hi - lo
            })
            .collect()
    }

    fn assignment_at(&self, model: &FactorModel, flat: usize) -> Assignment {
        let mut rest = flat;
        let mut lambda = vec![None; self.digits.len()];
        // lambda digits run fastest, matching the enumeration order
        for (j, &size) in self.digits.iter().enumerate() {
            let digit = rest % size;
            rest /= size;
            lambda[j] = model.ilf_domains()[j].outputs.get(digit).copied();
        }
        let bits = rest % self.ybar_count;
        let y_idx = rest / self.ybar_count;
        debug_assert!(y_idx < self.y_count);
        let mut y_bar = vec![false; model.seen_labels().len()];
        write_bits(bits, &mut y_bar);
        Assignment { y: model.y_value(y_idx), y_bar, lambda }
    }

    pub fn sample(&self, model: &FactorModel, rng: &mut impl Rng) -> Assignment {
        let u: f64 = rng.gen();
        let idx = match self.cdf.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        self.assignment_at(model, idx.min(self.cdf.len() - 1))
    }
}

/// Enumerates and normalizes the full joint into a sampling table.
pub fn exact_joint_table(
    model: &FactorModel,
    budget: &EnumerationBudget,
) -> Result<ExactJoint, InferenceError> {
    let states = check_budget(joint_state_count(model), budget.joint_states)?;
    let mut logw = Vec::with_capacity(states);
    for_each_joint_state(model, |a| logw.push(model.log_unnormalized(a)));
    // enumeration above fixes lambda fastest per (y, bits); rebuild flat
    // indices to match assignment_at: flat = (y * ybar + bits) * prod(digits) + lambda
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    let mut cdf = logw;
    let mut acc = 0.0;
    for w in cdf.iter_mut() {
        acc += *w / total;
        *w = acc;
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    let ybar_count = if model.uses_y_bar() { 1usize << model.seen_labels().len() } else { 1 };
    Ok(ExactJoint {
        cdf,
        y_count: model.y_count(),
        ybar_count,
        digits: model
            .ilf_domains()
            .iter()
            .map(|d| d.outputs.len() + d.can_abstain as usize)
            .collect(),
    })
}

fn sample_categorical(rng: &mut impl Rng, log_weights: &[f64]) -> usize {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Systematic-scan Gibbs chain: `Y`, then each latent bit in ascending
/// order, then each unclamped ILF output. Deterministic given the seed.
pub struct GibbsSampler<'m> {
    model: &'m FactorModel,
    state: Assignment,
    clamped: bool,
    rng: ChaCha8Rng,
}

impl<'m> GibbsSampler<'m> {
    /// `condition` clamps the lambda sites to an observed row (positional
    /// representation, `None` = abstain).
    pub fn new(
        model: &'m FactorModel,
        condition: Option<&[Option<usize>]>,
        seed: u64,
    ) -> Result<Self, InferenceError> {
        if let Some(row) = condition {
            if row.len() != model.ilf_domains().len() {
                return Err(
                    ModelError::RowLength { expected: model.ilf_domains().len(), got: row.len() }
                        .into(),
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = model.y_value(rng.gen_range(0..model.y_count()));
        let y_bar = (0..model.seen_labels().len())
            .map(|_| model.uses_y_bar() && rng.gen_bool(0.5))
            .collect();
        let lambda = match condition {
            Some(row) => row.to_vec(),
            None => model
                .ilf_domains()
                .iter()
                .map(|dom| {
                    let size = dom.outputs.len() + dom.can_abstain as usize;
                    dom.outputs.get(rng.gen_range(0..size)).copied()
                })
                .collect(),
        };
        Ok(GibbsSampler {
            model,
            state: Assignment { y, y_bar, lambda },
            clamped: condition.is_some(),
            rng,
        })
    }

    pub fn state(&self) -> &Assignment {
        &self.state
    }

    pub fn set_state(&mut self, state: Assignment) {
        self.state = state;
    }

    /// Full conditional of `Y` given the rest of the current state.
    pub fn full_conditional_y(&self) -> Vec<f64> {
        let mut probe = self.state.clone();
        let logw: Vec<f64> = (0..self.model.y_count())
            .map(|i| {
                probe.y = self.model.y_value(i);
                self.model.partial_score(self.model.touch_y(), &probe)
            })
            .collect();
        normalize_log(&logw)
    }

    /// Full conditional of latent bit `i`, returned as `[P(0), P(1)]`.
    pub fn full_conditional_y_bar(&self, i: usize) -> [f64; 2] {
        let mut probe = self.state.clone();
        probe.y_bar[i] = false;
        let w0 = self.model.partial_score(self.model.touch_y_bar(i), &probe);
        probe.y_bar[i] = true;
        let w1 = self.model.partial_score(self.model.touch_y_bar(i), &probe);
        let p = normalize_log(&[w0, w1]);
        [p[0], p[1]]
    }

    /// Full conditional of ILF output `j` over its domain, abstention last.
    pub fn full_conditional_lambda(&self, j: usize) -> Vec<f64> {
        let dom = &self.model.ilf_domains()[j];
        let mut probe = self.state.clone();
        let mut logw = Vec::with_capacity(dom.outputs.len() + 1);
        for &pos in &dom.outputs {
            probe.lambda[j] = Some(pos);
            logw.push(self.model.partial_score(self.model.touch_lambda(j), &probe));
        }
        if dom.can_abstain {
            probe.lambda[j] = None;
            logw.push(self.model.partial_score(self.model.touch_lambda(j), &probe));
        }
        normalize_log(&logw)
    }

    /// One systematic scan over all unclamped sites.
    pub fn sweep(&mut self) {
        gibbs_sweep(self.model, &mut self.state, self.clamped, &mut self.rng);
    }
}

/// One systematic Gibbs scan against a caller-held model reference; this is
/// what the training loop drives while theta keeps changing underneath.
pub fn gibbs_sweep(
    model: &FactorModel,
    state: &mut Assignment,
    lambda_clamped: bool,
    rng: &mut ChaCha8Rng,
) {
    // Y
    let mut logw = Vec::with_capacity(model.y_count());
    for i in 0..model.y_count() {
        state.y = model.y_value(i);
        logw.push(model.partial_score(model.touch_y(), state));
    }
    let pick = sample_categorical(rng, &logw);
    state.y = model.y_value(pick);

    // latent bits
    if model.uses_y_bar() {
        for i in 0..state.y_bar.len() {
            state.y_bar[i] = false;
            let w0 = model.partial_score(model.touch_y_bar(i), state);
            state.y_bar[i] = true;
            let w1 = model.partial_score(model.touch_y_bar(i), state);
            state.y_bar[i] = sample_categorical(rng, &[w0, w1]) == 1;
        }
    }

    // ILF outputs
    if !lambda_clamped {
        for j in 0..state.lambda.len() {
            let dom = &model.ilf_domains()[j];
            let size = dom.outputs.len() + dom.can_abstain as usize;
            let mut logw = Vec::with_capacity(size);
            for d in 0..size {
                state.lambda[j] = dom.outputs.get(d).copied();
                logw.push(model.partial_score(model.touch_lambda(j), state));
            }
            let pick = sample_categorical(rng, &logw);
            state.lambda[j] = dom.outputs.get(pick).copied();
        }
    }
}

fn normalize_log(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Post-burn-in assignment stream: runs `burn_in` warm-up sweeps, then
/// yields one assignment per sweep until `sweeps` total have run.
pub struct GibbsStream<'m> {
    sampler: GibbsSampler<'m>,
    emitted: usize,
    to_emit: usize,
    warmed: bool,
    burn_in: usize,
}

impl Iterator for GibbsStream<'_> {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        if self.emitted == self.to_emit {
            return None;
        }
        if !self.warmed {
            for _ in 0..self.burn_in {
                self.sampler.sweep();
            }
            self.warmed = true;
        }
        self.sampler.sweep();
        self.emitted += 1;
        Some(self.sampler.state().clone())
    }
}

/// Builds a seeded Gibbs stream emitting `sweeps - burn_in` assignments.
pub fn gibbs_sample<'m>(
    model: &'m FactorModel,
    condition: Option<&[Option<usize>]>,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<GibbsStream<'m>, InferenceError> {
    if sweeps <= burn_in {
        return Err(InferenceError::InvalidSweeps { sweeps, burn_in });
    }
    Ok(GibbsStream {
        sampler: GibbsSampler::new(model, condition, seed)?,
        emitted: 0,
        to_emit: sweeps - burn_in,
        warmed: false,
        burn_in,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMethod {
    Auto,
    Exact,
    Gibbs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub budget: EnumerationBudget,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for PosteriorParams {
    fn default() -> Self {
        PosteriorParams {
            budget: EnumerationBudget::default(),
            sweeps: 22_000,
            burn_in: 2_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Provenance {
    Exact,
    Gibbs { sweeps: usize, burn_in: usize, seed: u64 },
}

/// Per-data-point distributions over the desired classes (and the unknown
/// class when the model carries one, always last).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLabels {
    pub class_names: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl PosteriorLabels {
    /// Argmax with lowest-index tie breaking; desired classes come first,
    /// so a tie against unknown resolves to the desired class.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|p| {
                let mut best = 0;
                for (i, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

fn mix_seed(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Posterior over desired labels for every row of an output matrix.
///
/// Rows with identical votes are computed once and shared; with the Gibbs
/// method every unique row gets its own seeded chain, so results do not
/// depend on worker count or row order.
pub fn posterior_labels(
    model: &FactorModel,
    outputs: &IlfOutputMatrix,
    method: InferenceMethod,
    params: &PosteriorParams,
) -> Result<PosteriorLabels, InferenceError> {
    let rows: Vec<Vec<Option<usize>>> = outputs
        .rows()
        .map(|r| model.lambda_from_row(r))
        .collect::<Result<_, _>>()?;

    let mut unique: Vec<Vec<Option<usize>>> = Vec::new();
    let mut index_of: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
    let mut row_to_unique = Vec::with_capacity(rows.len());
    for row in rows {
        let next = unique.len();
        let idx = *index_of.entry(row.clone()).or_insert_with(|| {
            unique.push(row);
            next
        });
        row_to_unique.push(idx);
    }

    let use_exact = match method {
        InferenceMethod::Exact => true,
        InferenceMethod::Gibbs => false,
        InferenceMethod::Auto => {
            conditional_state_count(model) <= params.budget.conditional_states as u128
        }
    };

    let marginals: Vec<Vec<f64>> = if use_exact {
        unique
            .par_iter()
            .map(|lambda| exact_posterior(model, lambda, &params.budget).map(|t| t.y_marginal()))
            .collect::<Result<_, _>>()?
    } else {
        if params.sweeps <= params.burn_in {
            return Err(InferenceError::InvalidSweeps {
                sweeps: params.sweeps,
                burn_in: params.burn_in,
            });
        }
        unique
            .par_iter()
            .enumerate()
            .map(|(i, lambda)| {
                let seed = mix_seed(params.seed, i as u64);
                let stream =
                    gibbs_sample(model, Some(lambda), params.sweeps, params.burn_in, seed)?;
                let mut counts = vec![0usize; model.y_count()];
                let mut total = 0usize;
                for a in stream {
                    counts[model.y_index(a.y)] += 1;
                    total += 1;
                }
                Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
            })
            .collect::<Result<_, InferenceError>>()?
    };

    Ok(PosteriorLabels {
        class_names: model.class_names(),
        probs: row_to_unique.into_iter().map(|u| marginals[u].clone()).collect(),
        provenance: if use_exact {
            Provenance::Exact
        } else {
            Provenance::Gibbs {
                sweeps: params.sweeps,
                burn_in: params.burn_in,
                seed: params.seed,
            }
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{IlfSpec, LabelGraphBuilder, RelationType};
    use crate::model::{BuildOptions, Dependency};

    fn minimal_model(theta: Vec<f64>) -> FactorModel {
        let mut b = LabelGraphBuilder::new();
        let y = b.add_desired("target");
        let s = b.add_seen("tag");
        b.relate(y, s, RelationType::Subsumed);
        let g = b.build().unwrap();
        let ilfs = vec![IlfSpec::new(0, vec![s], true)];
        let mut m = FactorModel::build_plrm(&g, &ilfs, BuildOptions::default()).unwrap();
        m.set_theta(theta).unwrap();
        m
    }

    #[test]
    fn zero_theta_gives_uniform_conditional() {
        let m = minimal_model(vec![0.0, 0.0, 0.0]);
        let table = exact_posterior(&m, &[Some(0)], &EnumerationBudget::default()).unwrap();
        let states = table.probs.len();
        assert_eq!(states, m.y_count() * 2);
        for &p in &table.probs {
            assert!((p - 1.0 / states as f64).abs() < 1e-12);
        }
        let sum: f64 = table.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn large_accuracy_weight_concentrates_mass() {
        // vote observed, big accuracy weight: posterior piles onto the
        // (Y = target, bit = 1) state
        let m = minimal_model(vec![4.0, 6.0, 2.0]);
        let table = exact_posterior(&m, &[Some(0)], &EnumerationBudget::default()).unwrap();
        let marg = table.y_marginal();
        assert!(marg[0] > 0.9, "target mass {marg:?}");
        assert!(table.prob(0, 1) > table.prob(0, 0));
        // concentration is monotone in the accuracy weight
        let weaker = minimal_model(vec![4.0, 1.0, 2.0]);
        let weaker_table =
            exact_posterior(&weaker, &[Some(0)], &EnumerationBudget::default()).unwrap();
        assert!(table.prob(0, 1) > weaker_table.prob(0, 1));
    }

    #[test]
    fn budget_exceeded_is_an_explicit_error() {
        let m = minimal_model(vec![0.0; 3]);
        let tiny = EnumerationBudget { conditional_states: 1, joint_states: 1 };
        assert!(matches!(
            exact_posterior(&m, &[None], &tiny),
            Err(InferenceError::BudgetExceeded { .. })
        ));
        assert!(matches!(
            exact_joint_expectation(&m, &tiny),
            Err(InferenceError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn zero_theta_joint_expectation_is_uniform_average() {
        let m = minimal_model(vec![0.0; 3]);
        let expectation = exact_joint_expectation(&m, &EnumerationBudget::default()).unwrap();
        // brute force the uniform average independently
        let mut sums = vec![0.0f64; 3];
        let mut count = 0usize;
        for_each_joint_state(&m, |a| {
            let phi = m.feature_vector(a).unwrap();
            for (s, v) in sums.iter_mut().zip(&phi) {
                *s += *v as f64;
            }
            count += 1;
        });
        for (e, s) in expectation.iter().zip(&sums) {
            assert!((e - s / count as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_expectation_matches_monte_carlo() {
        let m = minimal_model(vec![0.7, 1.3, 0.4]);
        let budget = EnumerationBudget::default();
        let expectation = exact_joint_expectation(&m, &budget).unwrap();
        let table = exact_joint_table(&m, &budget).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 200_000usize;
        let mut mean = vec![0.0f64; m.dependency_count()];
        for _ in 0..draws {
            let a = table.sample(&m, &mut rng);
            for (acc, v) in mean.iter_mut().zip(m.feature_vector(&a).unwrap()) {
                *acc += v as f64;
            }
        }
        for v in mean.iter_mut() {
            *v /= draws as f64;
        }
        // 3 sigma with sigma <= 1/sqrt(draws) per +-1-bounded coordinate
        let tol = 3.0 / (draws as f64).sqrt();
        for (e, mc) in expectation.iter().zip(&mean) {
            assert!((e - mc).abs() < tol, "exact {e} vs mc {mc}");
        }
    }

    #[test]
    fn never_firing_factor_has_zero_expectation() {
        // two seen labels, the ILF only emits the first: an accuracy factor
        // on (seen = 1, ilf = 0) can never fire
        let mut b = LabelGraphBuilder::new();
        let y = b.add_desired("target");
        let s0 = b.add_seen("emitted");
        let s1 = b.add_seen("silent");
        b.relate(y, s0, RelationType::Subsumed)
            .relate(y, s1, RelationType::Exclusive)
            .relate(s0, s1, RelationType::Exclusive);
        let g = b.build().unwrap();
        let ilfs = vec![IlfSpec::new(0, vec![s0], true)];
        let m = FactorModel::build_plrm(&g, &ilfs, BuildOptions::default()).unwrap();

        let mut deps = m.dependencies().to_vec();
        deps.push(Dependency::Accuracy { seen: 1, ilf: 0 });
        let mut theta: Vec<f64> = (1..=deps.len()).map(|i| 0.1 * i as f64).collect();
        theta[deps.len() - 1] = 0.5;
        let m2 = crate::model::FactorModel::assemble(
            m.kind(),
            m.include_unknown(),
            m.desired_labels().to_vec(),
            m.seen_labels().to_vec(),
            m.ilf_domains().to_vec(),
            deps,
            theta,
        );
        let e2 = exact_joint_expectation(&m2, &EnumerationBudget::default()).unwrap();
        assert_eq!(*e2.last().unwrap(), 0.0);
    }

    #[test]
    fn clamped_lambda_never_changes() {
        let m = minimal_model(vec![0.5, 0.5, 0.5]);
        let observed = vec![Some(0)];
        let stream = gibbs_sample(&m, Some(&observed), 50, 10, 9).unwrap();
        for a in stream {
            assert_eq!(a.lambda, observed);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let m = minimal_model(vec![0.5, 1.0, 0.25]);
        let a: Vec<Assignment> = gibbs_sample(&m, None, 200, 50, 31).unwrap().collect();
        let b: Vec<Assignment> = gibbs_sample(&m, None, 200, 50, 31).unwrap().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sweeps_must_exceed_burn_in() {
        let m = minimal_model(vec![0.0; 3]);
        assert!(matches!(
            gibbs_sample(&m, None, 10, 10, 0),
            Err(InferenceError::InvalidSweeps { .. })
        ));
    }

    #[test]
    fn gibbs_conditional_tracks_exact_marginal() {
        let m = minimal_model(vec![0.8, 1.6, 0.7]);
        let lambda = vec![Some(0)];
        let exact = exact_posterior(&m, &lambda, &EnumerationBudget::default())
            .unwrap()
            .y_marginal();
        let mut counts = vec![0usize; m.y_count()];
        let stream = gibbs_sample(&m, Some(&lambda), 20_500, 500, 77).unwrap();
        let mut total = 0;
        for a in stream {
            counts[m.y_index(a.y)] += 1;
            total += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv}");
    }

    #[test]
    fn single_site_kernels_leave_exact_table_invariant() {
        // validates the sampler's full conditionals against enumeration:
        // pushing the exact table through one kernel must reproduce it
        let m = minimal_model(vec![0.9, 1.1, 0.6]);
        let lambda = vec![Some(0)];
        let table = exact_posterior(&m, &lambda, &EnumerationBudget::default()).unwrap();
        let mut sampler = GibbsSampler::new(&m, Some(&lambda), 0).unwrap();

        // Y kernel
        let mut after_y = vec![0.0; table.probs.len()];
        for bits in 0..table.ybar_count {
            let mut y_bar = vec![false; m.seen_labels().len()];
            write_bits(bits, &mut y_bar);
            sampler.set_state(Assignment {
                y: m.y_value(0),
                y_bar,
                lambda: lambda.clone(),
            });
            let kernel = sampler.full_conditional_y();
            let col_mass: f64 = (0..table.y_count).map(|y| table.prob(y, bits)).sum();
            for (y, k) in kernel.iter().enumerate() {
                after_y[y * table.ybar_count + bits] += col_mass * k;
            }
        }
        for (a, b) in after_y.iter().zip(&table.probs) {
            assert!((a - b).abs() < 1e-9);
        }

        // single-bit kernel
        let mut after_bit = vec![0.0; table.probs.len()];
        for y in 0..table.y_count {
            for bits in 0..table.ybar_count {
                let mut y_bar = vec![false; m.seen_labels().len()];
                write_bits(bits, &mut y_bar);
                sampler.set_state(Assignment {
                    y: m.y_value(y),
                    y_bar,
                    lambda: lambda.clone(),
                });
                let kernel = sampler.full_conditional_y_bar(0);
                for (value, k) in kernel.iter().enumerate() {
                    let target = (bits & !1) | value;
                    after_bit[y * table.ybar_count + target] += table.prob(y, bits) * k;
                }
            }
        }
        for (a, b) in after_bit.iter().zip(&table.probs) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn decomposed_scorer_matches_naive_evaluation() {
        use crate::model::BuildOptions;
        use rand::{Rng, SeedableRng};
        // a model with every relation type in play
        let task =
            crate::synthlab::generate_task(&crate::synthlab::SimSpec::uniform(
                3, 5, 3, 0.8, 0.2, 30, 21,
            ))
            .unwrap();
        let mut m =
            FactorModel::build_plrm(&task.graph, &task.ilfs, BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta: Vec<f64> =
            (0..m.dependency_count()).map(|_| rng.gen_range(0.01..1.5)).collect();
        m.set_theta(theta).unwrap();
        let ybar_count = 1usize << m.seen_labels().len();
        for row in task.outputs.rows().take(10) {
            let lambda = m.lambda_from_row(row).unwrap();
            let mut fast = vec![0.0; m.y_count() * ybar_count];
            CondScorer::new(&m, &lambda).scores_into(ybar_count, &mut fast);
            for_each_conditional_state(&m, &lambda, |y_idx, bits, a| {
                let naive = m.log_unnormalized(a);
                let got = fast[y_idx * ybar_count + bits];
                assert!(
                    (naive - got).abs() < 1e-10,
                    "state (y={y_idx}, bits={bits:b}): naive {naive} vs decomposed {got}"
                );
            });
        }
    }

    #[test]
    fn posterior_labels_dedups_and_matches_exact() {
        let m = minimal_model(vec![0.4, 1.2, 0.9]);
        let seen_id = m.seen_labels()[0].id;
        let outputs = IlfOutputMatrix::new(
            vec![0],
            vec![vec![Some(seen_id)], vec![None], vec![Some(seen_id)]],
        )
        .unwrap();
        let params = PosteriorParams::default();
        let post = posterior_labels(&m, &outputs, InferenceMethod::Auto, &params).unwrap();
        assert_eq!(post.provenance, Provenance::Exact);
        assert_eq!(post.probs.len(), 3);
        assert_eq!(post.probs[0], post.probs[2]);
        let direct = exact_posterior(&m, &[Some(0)], &params.budget).unwrap().y_marginal();
        for (a, b) in post.probs[0].iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in &post.probs {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn all_abstain_under_zero_theta_is_uniform() {
        let m = minimal_model(vec![0.0; 3]);
        let outputs = IlfOutputMatrix::new(vec![0], vec![vec![None]]).unwrap();
        let post = posterior_labels(
            &m,
            &outputs,
            InferenceMethod::Exact,
            &PosteriorParams::default(),
        )
        .unwrap();
        for &p in &post.probs[0] {
            assert!((p - 1.0 / m.y_count() as f64).abs() < 1e-12);
        }
    }
}
