//! Learned reward models and the naive mean predictors they are judged
//! against.
//!
//! A reward model here is a biased dot-product regressor
//! `r̂(s,a) = u_s·v_a + b_a + b₀` fit by SGD on observed rewards only; no
//! routine in this module ever sees the simulator's true reward table.
//! Ground-truth evaluation lives with the `oracle_*` functions elsewhere.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Catalog, LoggedInteraction, OfflineDataset};
use crate::error::{Error, Result};
use crate::rng::{indexed_stream, sample_categorical, stream};
use crate::tilt::Policy;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RmConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of interactions held out for validation, in (0, 1).
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for RmConfig {
    fn default() -> Self {
        RmConfig::new(4)
    }
}

impl RmConfig {
    pub fn new(dim: usize) -> Self {
        RmConfig {
            dim,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 64,
            validation_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::parameter("reward model width must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::parameter("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::parameter("epochs and batch size must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::parameter(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Dot-product reward regressor `u_s·v_a + b_a + b₀`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardModel {
    pub user_embeddings: Array2<f64>,
    pub item_embeddings: Array2<f64>,
    pub item_bias: Array1<f64>,
    pub global_bias: f64,
}

impl RewardModel {
    /// Rebuilds a model from stored tensors, validating shape agreement.
    pub fn from_parts(
        user_embeddings: Array2<f64>,
        item_embeddings: Array2<f64>,
        item_bias: Array1<f64>,
        global_bias: f64,
    ) -> Result<Self> {
        if user_embeddings.ncols() != item_embeddings.ncols() {
            return Err(Error::parameter(format!(
                "user embeddings have width {} but item embeddings have width {}",
                user_embeddings.ncols(),
                item_embeddings.ncols()
            )));
        }
        if item_bias.len() != item_embeddings.nrows() {
            return Err(Error::parameter(format!(
                "item bias has {} entries for {} items",
                item_bias.len(),
                item_embeddings.nrows()
            )));
        }
        if !global_bias.is_finite() {
            return Err(Error::parameter("global bias must be finite"));
        }
        Ok(RewardModel {
            user_embeddings,
            item_embeddings,
            item_bias,
            global_bias,
        })
    }

    pub fn predict(&self, context: usize, action: usize) -> f64 {
        self.user_embeddings
            .row(context)
            .dot(&self.item_embeddings.row(action))
            + self.item_bias[action]
            + self.global_bias
    }

    pub fn scores_row(&self, context: usize) -> Vec<f64> {
        (0..self.item_bias.len())
            .map(|a| self.predict(context, a))
            .collect()
    }
}

/// Squared and absolute error of a fit on one interaction set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitReport {
    pub train_mse: f64,
    pub train_mae: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub n_train: usize,
    pub n_val: usize,
}

/// Trained model plus the exact split it was fit and validated on, so
/// downstream comparisons can reuse data the model never trained on.
#[derive(Debug, Clone)]
pub struct RmArtifacts {
    pub model: RewardModel,
    pub report: FitReport,
    pub train: Vec<LoggedInteraction>,
    pub validation: Vec<LoggedInteraction>,
}

fn mse_mae(model: &RewardModel, data: &[LoggedInteraction]) -> (f64, f64) {
    let n = data.len().max(1) as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for x in data {
        let e = model.predict(x.context, x.action) - x.observed_reward;
        se += e * e;
        ae += e.abs();
    }
    (se / n, ae / n)
}

/// Fits the reward model on a seeded train/validation split of the logged
/// interactions. Only observed rewards are read.
pub fn train_reward_model(dataset: &OfflineDataset, cfg: &RmConfig) -> Result<RmArtifacts> {
    cfg.validate()?;
    let n = dataset.interactions.len();
    if n < 2 {
        return Err(Error::parameter(
            "need at least two interactions to split off a validation set",
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(cfg.seed, "rm-split");
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let n_val = ((n as f64 * cfg.validation_fraction).ceil() as usize).clamp(1, n - 1);
    let validation: Vec<LoggedInteraction> =
        order[..n_val].iter().map(|&i| dataset.interactions[i]).collect();
    let train: Vec<LoggedInteraction> =
        order[n_val..].iter().map(|&i| dataset.interactions[i]).collect();

    let catalog = dataset.catalog;
    let mut init_rng = stream(cfg.seed, "rm-init");
    let normal = Normal::new(0.0, 0.1).expect("fixed scale");
    let mut model = RewardModel {
        user_embeddings: Array2::from_shape_fn((catalog.n_contexts, cfg.dim), |_| {
            normal.sample(&mut init_rng)
        }),
        item_embeddings: Array2::from_shape_fn((catalog.n_actions, cfg.dim), |_| {
            normal.sample(&mut init_rng)
        }),
        item_bias: Array1::zeros(catalog.n_actions),
        global_bias: train.iter().map(|x| x.observed_reward).sum::<f64>() / train.len() as f64,
    };

    let n_train = train.len();
    let mut idx: Vec<usize> = (0..n_train).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = indexed_stream(cfg.seed, "rm-shuffle", epoch as u64);
        for i in (1..n_train).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            idx.swap(i, j);
        }
        for (batch_no, chunk) in idx.chunks(cfg.batch_size).enumerate() {
            let inv = 1.0 / chunk.len() as f64;
            let mut du = Array2::<f64>::zeros(model.user_embeddings.dim());
            let mut dv = Array2::<f64>::zeros(model.item_embeddings.dim());
            let mut db = Array1::<f64>::zeros(model.item_bias.len());
            let mut db0 = 0.0;
            for &i in chunk {
                let x = &train[i];
                let err = 2.0 * inv * (model.predict(x.context, x.action) - x.observed_reward);
                if !err.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_no,
                        detail: format!("non-finite residual {err}"),
                    });
                }
                for d in 0..cfg.dim {
                    du[[x.context, d]] += err * model.item_embeddings[[x.action, d]];
                    dv[[x.action, d]] += err * model.user_embeddings[[x.context, d]];
                }
                db[x.action] += err;
                db0 += err;
            }
            model
                .user_embeddings
                .zip_mut_with(&du, |p, &g| *p -= cfg.learning_rate * g);
            model
                .item_embeddings
                .zip_mut_with(&dv, |p, &g| *p -= cfg.learning_rate * g);
            model
                .item_bias
                .zip_mut_with(&db, |p, &g| *p -= cfg.learning_rate * g);
            model.global_bias -= cfg.learning_rate * db0;
        }
    }

    let (train_mse, train_mae) = mse_mae(&model, &train);
    let (val_mse, val_mae) = mse_mae(&model, &validation);
    Ok(RmArtifacts {
        model,
        report: FitReport {
            train_mse,
            train_mae,
            val_mse,
            val_mae,
            n_train,
            n_val,
        },
        train,
        validation,
    })
}

/// Mean-rating baselines: per-user mean, per-item mean, global mean, with
/// unseen users/items falling back to the global mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaivePredictors {
    user_mean: Vec<Option<f64>>,
    item_mean: Vec<Option<f64>>,
    global_mean: f64,
}

impl NaivePredictors {
    pub fn fit(catalog: Catalog, train: &[LoggedInteraction]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::parameter("cannot fit mean predictors on no data"));
        }
        let mut user_sum = vec![(0.0, 0usize); catalog.n_contexts];
        let mut item_sum = vec![(0.0, 0usize); catalog.n_actions];
        let mut total = 0.0;
        for x in train {
            user_sum[x.context].0 += x.observed_reward;
            user_sum[x.context].1 += 1;
            item_sum[x.action].0 += x.observed_reward;
            item_sum[x.action].1 += 1;
            total += x.observed_reward;
        }
        let fold = |sums: Vec<(f64, usize)>| {
            sums.into_iter()
                .map(|(s, c)| if c > 0 { Some(s / c as f64) } else { None })
                .collect()
        };
        Ok(NaivePredictors {
            user_mean: fold(user_sum),
            item_mean: fold(item_sum),
            global_mean: total / train.len() as f64,
        })
    }

    pub fn global(&self) -> f64 {
        self.global_mean
    }

    pub fn user(&self, context: usize) -> f64 {
        self.user_mean[context].unwrap_or(self.global_mean)
    }

    pub fn item(&self, action: usize) -> f64 {
        self.item_mean[action].unwrap_or(self.global_mean)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorRow {
    pub name: String,
    pub mse: f64,
    pub mae: f64,
}

/// Side-by-side error of the learned model and the mean baselines on a
/// common evaluation set (use one disjoint from the model's training
/// split).
pub fn evaluate_predictors(
    eval: &[LoggedInteraction],
    model: &RewardModel,
    naive: &NaivePredictors,
) -> Result<Vec<PredictorRow>> {
    if eval.is_empty() {
        return Err(Error::parameter("evaluation set is empty"));
    }
    let n = eval.len() as f64;
    let score = |predict: &dyn Fn(&LoggedInteraction) -> f64| {
        let (mut se, mut ae) = (0.0, 0.0);
        for x in eval {
            let e = predict(x) - x.observed_reward;
            se += e * e;
            ae += e.abs();
        }
        (se / n, ae / n)
    };
    let rows = vec![
        ("reward_model", score(&|x| model.predict(x.context, x.action))),
        ("user_mean", score(&|x| naive.user(x.context))),
        ("item_mean", score(&|x| naive.item(x.action))),
        ("global_mean", score(&|_| naive.global())),
    ];
    Ok(rows
        .into_iter()
        .map(|(name, (mse, mae))| PredictorRow {
            name: name.to_string(),
            mse,
            mae,
        })
        .collect())
}

/// Monte-Carlo estimate of the model-scored reward of a policy: draw a
/// context, draw an action from the policy, score it with the reward
/// model. This is the quantity reward-maximizing baselines optimize, and
/// deliberately says nothing about true rewards.
pub fn avg_reward_score<P: Policy>(
    policy: &P,
    model: &RewardModel,
    context_dist: &[f64],
    n_generations: usize,
    seed: u64,
) -> Result<f64> {
    if n_generations == 0 {
        return Err(Error::parameter("need at least one generation"));
    }
    let mut rng = stream(seed, "rm-score");
    let mut total = 0.0;
    for _ in 0..n_generations {
        let s = sample_categorical(&mut rng, context_dist);
        let probs = policy.action_probs(s);
        let a = sample_categorical(&mut rng, &probs);
        total += model.predict(s, a);
    }
    Ok(total / n_generations as f64)
}

/// Exact expected model score `Σ_s d(s) Σ_a π(a|s)·r̂(s,a)`.
pub fn expected_rm_score<P: Policy>(
    policy: &P,
    model: &RewardModel,
    context_dist: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (s, &ds) in context_dist.iter().enumerate() {
        if ds == 0.0 {
            continue;
        }
        let probs = policy.action_probs(s);
        for (a, &pa) in probs.iter().enumerate() {
            total += ds * pa * model.predict(s, a);
        }
    }
    total
}
