//! Parameter estimation by stochastic gradient on the negative log marginal
//! likelihood of the observed votes.
//!
//! Each update pairs a draw from the current model's full joint with a draw
//! conditioned on one observed row; the feature-vector difference is an
//! unbiased estimate of the descent direction. Draws come from exact
//! categorical sampling when the state space is small enough, otherwise from
//! a persistent unconditional Gibbs chain plus short conditional chains.
//! An exact-gradient oracle built on enumeration is provided for validation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::IlfOutputMatrix;
use crate::inference::{
    conditional_state_count, exact_conditional_expectation, exact_joint_expectation,
    exact_joint_table, exact_log_partition, exact_posterior, gibbs_sweep, joint_state_count,
    EnumerationBudget, InferenceError,
};
use crate::model::{Assignment, FactorModel, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at update {update}: |theta|_inf = {norm:.3e} exceeds {bound:.3e}")]
    Diverged { update: usize, norm: f64, bound: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step size; `None` means `1 / m` for a dataset of `m` points.
    pub step_size: Option<f64>,
    pub epochs: usize,
    /// Warm-up sweeps for approximate conditional (and non-persistent
    /// unconditional) chains.
    pub burn_in: usize,
    /// Sweeps to advance the persistent unconditional chain per update.
    pub chain_sweeps_per_update: usize,
    /// Keep one unconditional chain alive across updates instead of
    /// restarting it each time.
    pub persistent_chain: bool,
    /// Elementwise floor applied to theta after every update; 0 disables.
    pub positivity_floor: f64,
    pub theta_init: f64,
    pub seed: u64,
    /// Joint/conditional state-count threshold below which draws use exact
    /// categorical sampling instead of Gibbs.
    pub exact_sampler_budget: usize,
    /// Abort when the max-norm of theta passes this bound.
    pub divergence_bound: f64,
    /// Optional stronger start for the vote-driven families (accuracy and
    /// pseudo-accuracy). Trusting the votes at the outset anchors the
    /// orientation of the latent classes; `None` keeps `theta_init` there
    /// too.
    pub accuracy_init: Option<f64>,
    /// Optional L2 shrink applied multiplicatively each update.
    pub weight_decay: f64,
    /// Reproduce the ascent-signed update (unconditional minus conditional)
    /// instead of the descent direction. For comparison experiments only.
    pub printed_update_sign: bool,
    /// Budget for the per-epoch exact NLL monitor; epochs outside it log
    /// `null`.
    pub monitor_budget: EnumerationBudget,
    /// Visit examples in a freshly shuffled order each epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: None,
            epochs: 10,
            burn_in: 10,
            chain_sweeps_per_update: 2,
            persistent_chain: true,
            positivity_floor: 1e-6,
            theta_init: 0.1,
            seed: 0,
            exact_sampler_budget: 1 << 13,
            divergence_bound: 1e3,
            accuracy_init: None,
            weight_decay: 0.0,
            printed_update_sign: false,
            monitor_budget: EnumerationBudget { conditional_states: 1 << 16, joint_states: 1 << 16 },
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if let Some(eta) = self.step_size {
            if !(eta > 0.0) {
                return Err(TrainError::Config(format!("step_size must be > 0, got {eta}")));
            }
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.positivity_floor < 0.0 {
            return Err(TrainError::Config("positivity_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Elementwise `max(theta_r, eps)`.
pub fn project_positive(theta: &[f64], eps: f64) -> Vec<f64> {
    theta.iter().map(|&w| w.max(eps)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub exact_nll: Option<f64>,
    pub theta_norm: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    /// How unconditional draws were realized.
    pub unconditional_sampler: String,
    /// How conditional draws were realized.
    pub conditional_sampler: String,
    pub epochs: Vec<EpochLog>,
}

/// Exact gradient of the per-example negative log marginal likelihood:
/// `E[phi] - E[phi | lambda = row]`, both by enumeration.
pub fn exact_nll_gradient(
    model: &FactorModel,
    lambda: &[Option<usize>],
    budget: &EnumerationBudget,
) -> Result<Vec<f64>, TrainError> {
    let joint = exact_joint_expectation(model, budget)?;
    let cond = exact_conditional_expectation(model, lambda, budget)?;
    Ok(joint.iter().zip(&cond).map(|(j, c)| j - c).collect())
}

/// Exact dataset NLL `sum_i [log Z - log W(row_i)]`, deduplicating rows.
pub fn exact_dataset_nll(
    model: &FactorModel,
    rows: &[Vec<Option<usize>>],
    budget: &EnumerationBudget,
) -> Result<f64, TrainError> {
    let log_z = exact_log_partition(model, budget)?;
    // sorted map: the summation order must not depend on hash state
    let mut counts: std::collections::BTreeMap<&[Option<usize>], usize> =
        std::collections::BTreeMap::new();
    for row in rows {
        *counts.entry(row.as_slice()).or_insert(0) += 1;
    }
    let mut nll = 0.0;
    for (row, count) in counts {
        let table = exact_posterior(model, row, budget)?;
        nll += count as f64 * (log_z - table.log_weight);
    }
    Ok(nll)
}

enum UnconditionalSampler {
    Exact,
    Persistent { state: Assignment, rng: ChaCha8Rng },
    Fresh,
}

/// Fits theta on observed votes and returns the trained model with its log.
///
/// Per example: draw `(Y, Ybar, lambda)` from the current joint and
/// `(Y', Ybar')` conditioned on the observed row, then step
/// `theta += eta * (phi_cond - phi_uncond)` — the descent direction of the
/// negative log marginal likelihood. Deterministic for a fixed seed.
pub fn fit(
    model: &FactorModel,
    outputs: &IlfOutputMatrix,
    cfg: &TrainConfig,
) -> Result<(FactorModel, TrainLog), TrainError> {
    cfg.validate()?;
    let rows: Vec<Vec<Option<usize>>> = outputs
        .rows()
        .map(|r| model.lambda_from_row(r))
        .collect::<Result<_, _>>()?;
    let m = rows.len();
    if m == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let eta = cfg.step_size.unwrap_or(1.0 / m as f64);

    let mut trained = model.clone();
    let init: Vec<f64> = match cfg.accuracy_init {
        None => vec![cfg.theta_init; model.dependency_count()],
        Some(acc_init) => model
            .dependencies()
            .iter()
            .map(|dep| match dep.family() {
                crate::model::Family::Accuracy | crate::model::Family::PseudoAccuracy => acc_init,
                _ => cfg.theta_init,
            })
            .collect(),
    };
    trained.set_theta(init)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let joint_exact = joint_state_count(&trained) <= cfg.exact_sampler_budget as u128;
    let cond_exact = conditional_state_count(&trained) <= cfg.exact_sampler_budget as u128;
    let sampler_budget = EnumerationBudget {
        conditional_states: cfg.exact_sampler_budget,
        joint_states: cfg.exact_sampler_budget,
    };

    let mut uncond = if joint_exact {
        UnconditionalSampler::Exact
    } else if cfg.persistent_chain {
        let state = random_state(&trained, &mut rng);
        let chain_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        UnconditionalSampler::Persistent { state, rng: chain_rng }
    } else {
        UnconditionalSampler::Fresh
    };

    let unconditional_desc = match &uncond {
        UnconditionalSampler::Exact => "exact categorical over the enumerated joint".to_string(),
        UnconditionalSampler::Persistent { .. } => format!(
            "persistent gibbs chain, {} sweeps per update",
            cfg.chain_sweeps_per_update
        ),
        UnconditionalSampler::Fresh => {
            format!("fresh gibbs chain per update, burn-in {}", cfg.burn_in)
        }
    };
    let conditional_desc = if cond_exact {
        "exact categorical over the enumerated conditional".to_string()
    } else {
        format!("fresh gibbs chain per example, burn-in {}", cfg.burn_in)
    };

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..m).collect();
    let mut update_no = 0usize;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            update_no += 1;
            let row = &rows[i];

            let uncond_draw: Assignment = match &mut uncond {
                UnconditionalSampler::Exact => {
                    let table = exact_joint_table(&trained, &sampler_budget)?;
                    table.sample(&trained, &mut rng)
                }
                UnconditionalSampler::Persistent { state, rng: chain_rng } => {
                    for _ in 0..cfg.chain_sweeps_per_update {
                        gibbs_sweep(&trained, state, false, chain_rng);
                    }
                    state.clone()
                }
                UnconditionalSampler::Fresh => {
                    let mut state = random_state(&trained, &mut rng);
                    let mut chain_rng = ChaCha8Rng::seed_from_u64(rng.gen());
                    for _ in 0..=cfg.burn_in {
                        gibbs_sweep(&trained, &mut state, false, &mut chain_rng);
                    }
                    state
                }
            };

            let cond_draw: Assignment = if cond_exact {
                let table = exact_posterior(&trained, row, &sampler_budget)?;
                let (y_idx, bits) = table.sample(&mut rng);
                conditional_assignment(&trained, y_idx, bits, row)
            } else {
                let mut state = random_state(&trained, &mut rng);
                state.lambda = row.clone();
                let mut chain_rng = ChaCha8Rng::seed_from_u64(rng.gen());
                for _ in 0..=cfg.burn_in {
                    gibbs_sweep(&trained, &mut state, true, &mut chain_rng);
                }
                state
            };

            let phi_c = trained.feature_vector(&cond_draw)?;
            let phi_u = trained.feature_vector(&uncond_draw)?;
            let shrink = 1.0 - eta * cfg.weight_decay;
            let theta = trained.theta_mut();
            let mut max_abs = 0.0f64;
            for r in 0..theta.len() {
                let grad_step = eta * (phi_c[r] - phi_u[r]) as f64;
                let step = if cfg.printed_update_sign { -grad_step } else { grad_step };
                theta[r] = theta[r] * shrink + step;
                if cfg.positivity_floor > 0.0 {
                    theta[r] = theta[r].max(cfg.positivity_floor);
                }
                max_abs = max_abs.max(theta[r].abs());
            }
            if max_abs > cfg.divergence_bound {
                return Err(TrainError::Diverged {
                    update: update_no,
                    norm: max_abs,
                    bound: cfg.divergence_bound,
                });
            }
        }

        let exact_nll = exact_dataset_nll(&trained, &rows, &cfg.monitor_budget).ok();
        let theta_norm = trained.theta().iter().map(|w| w * w).sum::<f64>().sqrt();
        epochs.push(EpochLog { epoch, exact_nll, theta_norm, step_size: eta });
    }

    Ok((
        trained,
        TrainLog {
            unconditional_sampler: unconditional_desc,
            conditional_sampler: conditional_desc,
            epochs,
        },
    ))
}

fn random_state(model: &FactorModel, rng: &mut impl Rng) -> Assignment {
    let y = model.y_value(rng.gen_range(0..model.y_count()));
    let y_bar = (0..model.seen_labels().len())
        .map(|_| model.uses_y_bar() && rng.gen_bool(0.5))
        .collect();
    let lambda = model
        .ilf_domains()
        .iter()
        .map(|dom| {
            let size = dom.outputs.len() + dom.can_abstain as usize;
            dom.outputs.get(rng.gen_range(0..size)).copied()
        })
        .collect();
    Assignment { y, y_bar, lambda }
}

fn conditional_assignment(
    model: &FactorModel,
    y_idx: usize,
    ybar_bits: usize,
    lambda: &[Option<usize>],
) -> Assignment {
    let mut y_bar = vec![false; model.seen_labels().len()];
    for (i, b) in y_bar.iter_mut().enumerate() {
        *b = ybar_bits & (1 << i) != 0;
    }
    Assignment { y: model.y_value(y_idx), y_bar, lambda: lambda.to_vec() }
}
