//! Weighted maximum-likelihood policy training.
//!
//! One loop covers behavior cloning (unit weights), linear reward
//! weighting, and exponential reward weighting `w = exp(r/λ)`: minimize
//! `(1/|B|) Σ_i w_i · Σ_t −log π_θ(a_t|s_t)` by plain SGD. With a full-
//! capacity encoder and exponential weights this converges to the
//! exponentially tilted empirical policy; the weights decide what the
//! maximum-likelihood fit is of, the optimizer stays ordinary supervised
//! learning.

use serde::{Deserialize, Serialize};

use crate::env::{OfflineDataset, SyntheticEnvironment};
use crate::error::{Error, Result};
use crate::mdp::return_stats;
use crate::metrics::{compute_metrics, MetricsReport, TestCase};
use crate::policy::{ParametricPolicy, PolicyGradient};
use crate::rng::indexed_stream;
use crate::tilt::{kl_divergence, policy_value, Policy, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Behavior cloning: every example weighs 1.
    Bc,
    /// Linear reward weighting: `w = r`.
    Rsft,
    /// Exponential reward weighting: `w = exp(r/λ)`.
    ExpRsft,
}

/// Context encoding the trained policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderKind {
    /// One logit column per context: full tabular capacity, convex fit.
    OneHot,
    /// Trained context embeddings of width `dim`.
    Learned { dim: usize },
    /// Context vector is the mean embedding of the context's history
    /// items; requires the dataset to carry histories.
    MeanHistory { dim: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Exponential-weight temperature; required for [`Algorithm::ExpRsft`],
    /// rejected otherwise.
    pub lambda: Option<f64>,
    /// Standardize rewards/returns before weighting. Unset means the mode
    /// default: off for per-interaction data, on for trajectories (raw
    /// returns grow with the horizon, so raw exponential weights would
    /// saturate).
    pub standardize_rewards: Option<bool>,
    /// Clamp negative linear weights to zero instead of training against
    /// those examples.
    pub clamp_negative_weights: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight whole trajectories by their return instead of interactions
    /// by their reward.
    pub trajectory_mode: bool,
    pub encoder: EncoderKind,
}

impl Default for TrainConfig {
    /// Exponential weighting, the house method. A temperature must still
    /// be chosen before training.
    fn default() -> Self {
        TrainConfig::new(Algorithm::ExpRsft)
    }
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            lambda: None,
            standardize_rewards: None,
            clamp_negative_weights: false,
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            trajectory_mode: false,
            encoder: EncoderKind::OneHot,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn standardize(&self) -> bool {
        self.standardize_rewards.unwrap_or(self.trajectory_mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::parameter("need at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::parameter("batch size must be positive"));
        }
        match (self.algorithm, self.lambda) {
            (Algorithm::ExpRsft, None) => Err(Error::parameter(
                "exponential weighting requires a temperature",
            )),
            (Algorithm::ExpRsft, Some(l)) if !(l > 0.0) || !l.is_finite() => Err(
                Error::parameter(format!("temperature must be positive, got {l}")),
            ),
            (Algorithm::Bc | Algorithm::Rsft, Some(_)) => Err(Error::parameter(
                "temperature only applies to exponential weighting",
            )),
            _ => Ok(()),
        }
        .and_then(|_| {
            if let EncoderKind::Learned { dim } | EncoderKind::MeanHistory { dim } = self.encoder {
                if dim == 0 {
                    return Err(Error::parameter("embedding width must be positive"));
                }
            }
            Ok(())
        })
    }
}

/// Weight applied to one training example given its (already standardized,
/// if enabled) reward or return.
pub fn example_weight(
    algorithm: Algorithm,
    value: f64,
    lambda: Option<f64>,
    clamp_negative: bool,
) -> f64 {
    match algorithm {
        Algorithm::Bc => 1.0,
        Algorithm::Rsft => {
            if clamp_negative {
                value.max(0.0)
            } else {
                value
            }
        }
        Algorithm::ExpRsft => (value / lambda.expect("validated config")).exp(),
    }
}

/// A weighted example: one interaction, or one trajectory's steps sharing
/// the trajectory weight.
#[derive(Debug, Clone)]
pub struct WeightedExample {
    pub weight: f64,
    pub steps: Vec<(usize, usize)>,
}

/// Converts a dataset into weighted examples per the config. Non-finite
/// weights are reported with the offending example index.
pub fn build_examples(dataset: &OfflineDataset, cfg: &TrainConfig) -> Result<Vec<WeightedExample>> {
    cfg.validate()?;
    let standardize = cfg.standardize();

    let (values, steps): (Vec<f64>, Vec<Vec<(usize, usize)>>) = if cfg.trajectory_mode {
        let trajectories = dataset.trajectories.as_ref().ok_or_else(|| {
            Error::parameter("trajectory mode requires a trajectory-structured dataset")
        })?;
        trajectories
            .iter()
            .map(|t| {
                (
                    t.total_return(),
                    t.steps.iter().map(|x| (x.context, x.action)).collect(),
                )
            })
            .unzip()
    } else {
        dataset
            .interactions
            .iter()
            .map(|x| (x.observed_reward, vec![(x.context, x.action)]))
            .unzip()
    };

    if values.is_empty() {
        return Err(Error::parameter("dataset is empty"));
    }
    let stats = return_stats(&values)?;

    let mut negatives = 0usize;
    let mut examples = Vec::with_capacity(values.len());
    for (i, (value, steps)) in values.into_iter().zip(steps).enumerate() {
        let v = if standardize { stats.standardize(value) } else { value };
        let w = example_weight(cfg.algorithm, v, cfg.lambda, cfg.clamp_negative_weights);
        if !w.is_finite() {
            return Err(Error::NonFiniteWeight { index: i, value: w });
        }
        if w < 0.0 {
            negatives += 1;
        }
        examples.push(WeightedExample { weight: w, steps });
    }
    if negatives > 0 {
        log::warn!(
            "{negatives} examples carry negative weights; their likelihood will be pushed down"
        );
    }
    Ok(examples)
}

/// Batch objective `(1/|B|) Σ_i w_i Σ_t −log π_θ(a_t|s_t)` and its exact
/// gradient.
pub fn weighted_nll_loss(
    policy: &ParametricPolicy,
    batch: &[&WeightedExample],
) -> Result<(f64, PolicyGradient)> {
    if batch.is_empty() {
        return Err(Error::parameter("empty batch"));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = PolicyGradient::zeros_like(policy);
    for ex in batch {
        let scale = ex.weight * inv;
        for &(s, a) in &ex.steps {
            loss -= scale * policy.log_prob(s, a);
            policy.accumulate_nll_grad(s, a, scale, &mut grad);
        }
    }
    Ok((loss, grad))
}

/// Largest discrepancy between the analytic batch gradient and a central
/// finite-difference estimate over every parameter, measured as
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)` so the scale is
/// relative for large entries and absolute near zero.
pub fn gradient_check(
    policy: &ParametricPolicy,
    batch: &[&WeightedExample],
    step: f64,
) -> Result<f64> {
    let (_, grad) = weighted_nll_loss(policy, batch)?;
    let loss_of = |p: &ParametricPolicy| -> f64 {
        let inv = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|ex| {
                ex.steps
                    .iter()
                    .map(|&(s, a)| -ex.weight * inv * p.log_prob(s, a))
                    .sum::<f64>()
            })
            .sum()
    };

    let mut worst = 0.0f64;
    let mut probe = |write: &dyn Fn(&mut ParametricPolicy, f64), base: f64, analytic: f64| {
        let mut plus = policy.clone();
        write(&mut plus, base + step);
        let mut minus = policy.clone();
        write(&mut minus, base - step);
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
        let scale = 1.0f64.max(analytic.abs()).max(numeric.abs());
        worst = worst.max((numeric - analytic).abs() / scale);
    };

    let (n_actions, dim) = policy.item_embeddings.dim();
    for a in 0..n_actions {
        for d in 0..dim {
            probe(
                &move |p, v| p.item_embeddings[[a, d]] = v,
                policy.item_embeddings[[a, d]],
                grad.item_embeddings[[a, d]],
            );
        }
        probe(
            &move |p, v| p.item_bias[a] = v,
            policy.item_bias[a],
            grad.item_bias[a],
        );
    }
    if let crate::policy::ContextEncoder::Learned { embeddings } = &policy.encoder {
        let ctx = grad.context_embeddings.as_ref().expect("learned encoder");
        for s in 0..embeddings.nrows() {
            for d in 0..embeddings.ncols() {
                probe(
                    &move |p, v| match &mut p.encoder {
                        crate::policy::ContextEncoder::Learned { embeddings } => {
                            embeddings[[s, d]] = v
                        }
                        _ => unreachable!(),
                    },
                    embeddings[[s, d]],
                    ctx[[s, d]],
                );
            }
        }
    }
    Ok(worst)
}

/// Per-epoch diagnostics. Optional fields are filled when the matching
/// evaluation hook is supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Expected true reward in the simulator.
    pub true_value: Option<f64>,
    /// Context-averaged KL from the reference policy (typically the exact
    /// tilt) to the current policy.
    pub kl_to_tilt: Option<f64>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

/// Optional per-epoch evaluations; each costs a pass over its inputs.
#[derive(Default, Clone, Copy)]
pub struct EvalHooks<'a> {
    pub env: Option<&'a SyntheticEnvironment>,
    pub reference: Option<&'a TabularPolicy>,
    pub test_cases: Option<&'a [TestCase]>,
}

/// Trains a fresh policy on the dataset.
pub fn train(
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    hooks: EvalHooks<'_>,
) -> Result<(ParametricPolicy, TrainTrace)> {
    cfg.validate()?;
    let n_contexts = dataset.catalog.n_contexts;
    let n_actions = dataset.catalog.n_actions;
    let policy = match cfg.encoder {
        EncoderKind::OneHot => ParametricPolicy::one_hot(n_contexts, n_actions, cfg.seed),
        EncoderKind::Learned { dim } => {
            ParametricPolicy::learned(n_contexts, n_actions, dim, cfg.seed)
        }
        EncoderKind::MeanHistory { dim } => {
            let histories = dataset.histories.clone().ok_or_else(|| {
                Error::parameter("history encoder requires a dataset with histories")
            })?;
            ParametricPolicy::mean_history(n_actions, dim, histories, cfg.seed)?
        }
    };
    train_from(policy, dataset, cfg, hooks)
}

/// Continues training from an existing policy (post-training setups).
pub fn train_from(
    mut policy: ParametricPolicy,
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    hooks: EvalHooks<'_>,
) -> Result<(ParametricPolicy, TrainTrace)> {
    let examples = build_examples(dataset, cfg)?;
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        let mut rng = indexed_stream(cfg.seed, "train-shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        let mut weighted_nll_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WeightedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = weighted_nll_loss(&policy, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("loss {loss}, max |grad| {}", grad.max_abs()),
                });
            }
            policy.apply_gradient(&grad, cfg.learning_rate);
            weighted_nll_sum += loss * batch.len() as f64;
        }

        let record = EpochRecord {
            epoch,
            loss: weighted_nll_sum / n as f64,
            true_value: match hooks.env {
                Some(env) => Some(policy_value(env, &policy)?.expected),
                None => None,
            },
            kl_to_tilt: match hooks.reference {
                Some(reference) => Some(mean_kl_from(reference, &policy, hooks.env)?),
                None => None,
            },
            metrics: match hooks.test_cases {
                Some(cases) => Some(compute_metrics(&policy, cases)?),
                None => None,
            },
        };
        trace.records.push(record);
    }
    Ok((policy, trace))
}

/// KL(reference ‖ policy) averaged over contexts, weighted by the
/// environment's context distribution when available.
fn mean_kl_from(
    reference: &TabularPolicy,
    policy: &ParametricPolicy,
    env: Option<&SyntheticEnvironment>,
) -> Result<f64> {
    let n_contexts = reference.n_contexts();
    let mut total = 0.0;
    for s in 0..n_contexts {
        let weight = match env {
            Some(e) => e.context_dist[s],
            None => 1.0 / n_contexts as f64,
        };
        if weight == 0.0 {
            continue;
        }
        let q = policy.action_probs(s);
        let kl = kl_divergence(reference.row(s).as_slice().expect("contiguous row"), &q)?;
        total += weight * kl;
    }
    Ok(total)
}

/// Outcome of one temperature in a sweep: oracle value and NDCG@10 at
/// their best epochs and at the last epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub best_value: f64,
    pub best_value_epoch: usize,
    pub final_value: f64,
    pub best_ndcg10: f64,
    pub best_ndcg10_epoch: usize,
    pub final_ndcg10: f64,
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub row: SweepRow,
    pub trace: TrainTrace,
}

/// Trains one exponentially weighted run per grid temperature, sharing the
/// base config (and seed, so runs are paired) across the grid.
pub fn lambda_sweep(
    dataset: &OfflineDataset,
    env: &SyntheticEnvironment,
    grid: &[f64],
    base: &TrainConfig,
    test_cases: &[TestCase],
) -> Result<Vec<SweepEntry>> {
    if grid.is_empty() {
        return Err(Error::parameter("temperature grid is empty"));
    }
    let hooks = EvalHooks {
        env: Some(env),
        reference: None,
        test_cases: Some(test_cases),
    };
    let mut entries = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = TrainConfig {
            algorithm: Algorithm::ExpRsft,
            lambda: Some(lambda),
            ..base.clone()
        };
        let (_, trace) = train(dataset, &cfg, hooks)?;
        let pick = |f: &dyn Fn(&EpochRecord) -> f64| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for r in &trace.records {
                let v = f(r);
                if v > best.1 {
                    best = (r.epoch, v);
                }
            }
            best
        };
        let value_of = |r: &EpochRecord| r.true_value.expect("env hook supplied");
        let ndcg_of = |r: &EpochRecord| r.metrics.as_ref().expect("case hook supplied").ndcg10;
        let (best_value_epoch, best_value) = pick(&value_of);
        let (best_ndcg10_epoch, best_ndcg10) = pick(&ndcg_of);
        let last = trace.records.last().expect("at least one epoch");
        entries.push(SweepEntry {
            row: SweepRow {
                lambda,
                best_value,
                best_value_epoch,
                final_value: value_of(last),
                best_ndcg10,
                best_ndcg10_epoch,
                final_ndcg10: ndcg_of(last),
            },
            trace,
        });
    }
    Ok(entries)
}
