//! Online direct preference optimization against a learned reward model.
//!
//! Pairs are sampled from the current policy, the reward model picks the
//! winner, and the policy maximizes the log-sigmoid preference margin
//! against a frozen reference. Like the clipped-surrogate optimizer, this
//! inherits every flaw of the reward model it queries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ParametricPolicy, PolicyGradient};
use crate::rm::RewardModel;
use crate::rng::{sample_categorical, stream};
use crate::tilt::Policy;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    /// Preference sharpness; scales the implicit-reward margin.
    pub beta: f64,
    pub pairs_per_step: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl DpoConfig {
    pub fn new() -> Self {
        DpoConfig {
            beta: 0.5,
            pairs_per_step: 64,
            steps: 50,
            learning_rate: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::parameter("beta must be positive"));
        }
        if self.pairs_per_step == 0 || self.steps == 0 {
            return Err(Error::parameter("steps and pairs per step must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::parameter("learning rate must be positive"));
        }
        Ok(())
    }
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(m)` computed without overflow for any margin.
fn neg_log_sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Reward-model judgment on a sampled pair: higher score wins, exact ties
/// go to the smaller action id.
pub fn choose_winner(model: &RewardModel, context: usize, a1: usize, a2: usize) -> (usize, usize) {
    let (q1, q2) = (model.predict(context, a1), model.predict(context, a2));
    if q1 > q2 || (q1 == q2 && a1 < a2) {
        (a1, a2)
    } else {
        (a2, a1)
    }
}

/// Loss and gradient contribution of one preference pair, scaled by
/// `scale` (the caller's 1/N). Returns `(loss, margin)`.
pub fn dpo_pair_grad(
    policy: &ParametricPolicy,
    reference: &ParametricPolicy,
    context: usize,
    winner: usize,
    loser: usize,
    beta: f64,
    scale: f64,
    grad: &mut PolicyGradient,
) -> (f64, f64) {
    let margin = beta
        * ((policy.log_prob(context, winner) - reference.log_prob(context, winner))
            - (policy.log_prob(context, loser) - reference.log_prob(context, loser)));
    // dL/dm = σ(m) − 1; chain through m = β(log π(w) − log π(l)) + const.
    let slope = sigmoid(margin) - 1.0;
    policy.accumulate_nll_grad(context, winner, -slope * beta * scale, grad);
    policy.accumulate_nll_grad(context, loser, slope * beta * scale, grad);
    (neg_log_sigmoid(margin), margin)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoStepInfo {
    pub loss: f64,
    pub mean_margin: f64,
    pub pairs_used: usize,
    /// Pairs where both samples drew the same action; no preference there.
    pub pairs_skipped: usize,
}

/// One step: sample pairs from the current policy, judge them with the
/// reward model, take a gradient step on the preference loss.
pub fn dpo_step<R: Rng + ?Sized>(
    policy: &mut ParametricPolicy,
    reference: &ParametricPolicy,
    model: &RewardModel,
    context_dist: &[f64],
    cfg: &DpoConfig,
    rng: &mut R,
    step: usize,
) -> Result<DpoStepInfo> {
    let mut pairs = Vec::with_capacity(cfg.pairs_per_step);
    let mut skipped = 0usize;
    for _ in 0..cfg.pairs_per_step {
        let s = sample_categorical(rng, context_dist);
        let probs = policy.action_probs(s);
        let a1 = sample_categorical(rng, &probs);
        let a2 = sample_categorical(rng, &probs);
        if a1 == a2 {
            skipped += 1;
            continue;
        }
        let (w, l) = choose_winner(model, s, a1, a2);
        pairs.push((s, w, l));
    }

    let mut info = DpoStepInfo {
        loss: 0.0,
        mean_margin: 0.0,
        pairs_used: pairs.len(),
        pairs_skipped: skipped,
    };
    if pairs.is_empty() {
        return Ok(info);
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut grad = PolicyGradient::zeros_like(policy);
    for &(s, w, l) in &pairs {
        let (loss, margin) = dpo_pair_grad(policy, reference, s, w, l, cfg.beta, inv, &mut grad);
        info.loss += inv * loss;
        info.mean_margin += inv * margin;
    }
    if !info.loss.is_finite() || !grad.is_finite() {
        return Err(Error::Diverged {
            epoch: step,
            batch: 0,
            detail: format!("preference loss {}", info.loss),
        });
    }
    policy.apply_gradient(&grad, cfg.learning_rate);
    Ok(info)
}

/// Full optimization loop; the reference is frozen at the initial policy.
pub fn run_dpo<F>(
    mut policy: ParametricPolicy,
    model: &RewardModel,
    context_dist: &[f64],
    cfg: &DpoConfig,
    mut on_step: F,
) -> Result<ParametricPolicy>
where
    F: FnMut(usize, &ParametricPolicy, &DpoStepInfo) -> Result<()>,
{
    cfg.validate()?;
    let reference = policy.clone();
    let mut rng = stream(cfg.seed, "dpo");
    for step in 0..cfg.steps {
        let info = dpo_step(&mut policy, &reference, model, context_dist, cfg, &mut rng, step)?;
        on_step(step, &policy, &info)?;
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_dataset, Catalog, NoiseModel, SyntheticEnvironment};
    use crate::metrics::oracle_value;
    use crate::rm::expected_rm_score;
    use crate::tilt::TabularPolicy;
    use crate::train::{train, Algorithm, EvalHooks, TrainConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};

    fn bias_only_model(biases: Vec<f64>, n_contexts: usize) -> RewardModel {
        RewardModel {
            user_embeddings: Array2::zeros((n_contexts, 1)),
            item_embeddings: Array2::zeros((biases.len(), 1)),
            item_bias: Array1::from_vec(biases),
            global_bias: 0.0,
        }
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let policy = ParametricPolicy::one_hot(2, 4, 3);
        let mut reference = policy.clone();
        reference.item_bias[1] += 0.3;
        let (context, winner, loser, beta) = (1, 2, 0, 0.7);

        let mut grad = PolicyGradient::zeros_like(&policy);
        let (loss, _) =
            dpo_pair_grad(&policy, &reference, context, winner, loser, beta, 1.0, &mut grad);
        assert!(loss > 0.0);

        let loss_of = |p: &ParametricPolicy| {
            let margin = beta
                * ((p.log_prob(context, winner) - reference.log_prob(context, winner))
                    - (p.log_prob(context, loser) - reference.log_prob(context, loser)));
            neg_log_sigmoid(margin)
        };
        let h = 1e-6;
        let (n_actions, dim) = policy.item_embeddings.dim();
        for a in 0..n_actions {
            for d in 0..dim {
                let mut plus = policy.clone();
                plus.item_embeddings[[a, d]] += h;
                let mut minus = policy.clone();
                minus.item_embeddings[[a, d]] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                assert_abs_diff_eq!(grad.item_embeddings[[a, d]], numeric, epsilon = 1e-5);
            }
            let mut plus = policy.clone();
            plus.item_bias[a] += h;
            let mut minus = policy.clone();
            minus.item_bias[a] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert_abs_diff_eq!(grad.item_bias[a], numeric, epsilon = 1e-5);
        }
    }

    #[test]
    fn ties_go_to_the_smaller_action_id() {
        let model = bias_only_model(vec![1.0, 1.0, 2.0], 1);
        assert_eq!(choose_winner(&model, 0, 1, 0), (0, 1));
        assert_eq!(choose_winner(&model, 0, 0, 1), (0, 1));
        assert_eq!(choose_winner(&model, 0, 2, 0), (2, 0));
    }

    #[test]
    fn optimization_raises_model_score() {
        let model = bias_only_model(vec![0.0, 0.2, 1.0, 0.1, 0.4], 3);
        let dist = [0.4, 0.3, 0.3];
        let policy = ParametricPolicy::one_hot(3, 5, 11);
        let before = expected_rm_score(&policy, &model, &dist);
        let cfg = DpoConfig {
            steps: 60,
            learning_rate: 0.2,
            ..DpoConfig::new()
        };
        let trained = run_dpo(policy, &model, &dist, &cfg, |_, _, _| Ok(())).unwrap();
        let after = expected_rm_score(&trained, &model, &dist);
        assert!(
            after > before + 0.3,
            "model score should rise substantially: {before} -> {after}"
        );
    }

    #[test]
    fn beats_weighted_sft_on_model_score_and_loses_on_true_value() {
        // The model is right where the logs are dense and wildly wrong on
        // the rarely logged last action, the way a fit on sparse data
        // extrapolates. The supervised runs inherit the log's support;
        // preference climbing walks to the model's favorite, so it wins on
        // model score and collapses on true value.
        let env = SyntheticEnvironment::new(
            Catalog::new(2, 5).unwrap(),
            ndarray::array![[0.8, 0.6, 0.3, 0.2, 0.05], [0.2, 0.7, 0.5, 0.3, 0.05]],
            1.0,
            vec![0.5, 0.5],
            TabularPolicy::from_rows_normalized(ndarray::array![
                [0.45, 0.3, 0.15, 0.08, 0.02],
                [0.1, 0.5, 0.25, 0.13, 0.02]
            ])
            .unwrap(),
            NoiseModel::None,
        )
        .unwrap();
        let data = sample_dataset(&env, 600, 11).unwrap();
        let model = bias_only_model(vec![0.7, 0.65, 0.35, 0.25, 1.5], 2);

        let bc_cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::new(Algorithm::Bc)
        };
        let exp_cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::new(Algorithm::ExpRsft).with_lambda(0.5)
        };
        let (bc, _) = train(&data, &bc_cfg, EvalHooks::default()).unwrap();
        let (exp, _) = train(&data, &exp_cfg, EvalHooks::default()).unwrap();

        let cfg = DpoConfig {
            steps: 100,
            learning_rate: 0.5,
            seed: 17,
            ..DpoConfig::new()
        };
        let dpo = run_dpo(
            ParametricPolicy::one_hot(2, 5, 23),
            &model,
            &env.context_dist,
            &cfg,
            |_, _, _| Ok(()),
        )
        .unwrap();

        let score = |p: &ParametricPolicy| expected_rm_score(p, &model, &env.context_dist);
        assert!(
            score(&dpo) > score(&exp) + 0.5,
            "model score: dpo {} vs exp-rsft {}",
            score(&dpo),
            score(&exp)
        );
        let dpo_value = oracle_value(&env, &dpo).unwrap();
        let bc_value = oracle_value(&env, &bc).unwrap();
        assert!(
            dpo_value < bc_value - 0.3,
            "true value: dpo {dpo_value} vs cloning {bc_value}"
        );
    }

    #[test]
    fn degenerate_policy_skips_identical_pairs_without_moving() {
        let mut policy = ParametricPolicy::one_hot(1, 3, 2);
        policy.item_bias[1] = 60.0; // effectively deterministic
        let snapshot = policy.clone();
        let reference = policy.clone();
        let model = bias_only_model(vec![0.0, 1.0, 2.0], 1);
        let cfg = DpoConfig::new();
        let mut rng = stream(3, "test");
        let info =
            dpo_step(&mut policy, &reference, &model, &[1.0], &cfg, &mut rng, 0).unwrap();
        assert_eq!(info.pairs_used, 0);
        assert_eq!(info.pairs_skipped, cfg.pairs_per_step);
        assert_eq!(policy.item_bias, snapshot.item_bias);
        assert_eq!(policy.item_embeddings, snapshot.item_embeddings);
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let model = bias_only_model(vec![0.0, 0.2, 1.0], 2);
        let dist = [0.5, 0.5];
        let cfg = DpoConfig {
            steps: 5,
            ..DpoConfig::new()
        };
        let a = run_dpo(
            ParametricPolicy::one_hot(2, 3, 4),
            &model,
            &dist,
            &cfg,
            |_, _, _| Ok(()),
        )
        .unwrap();
        let b = run_dpo(
            ParametricPolicy::one_hot(2, 3, 4),
            &model,
            &dist,
            &cfg,
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(a.item_bias, b.item_bias);
    }

    #[test]
    fn stable_log_sigmoid() {
        assert_abs_diff_eq!(neg_log_sigmoid(0.0), 2.0f64.ln(), epsilon = 1e-15);
        assert!(neg_log_sigmoid(800.0) >= 0.0);
        assert!(neg_log_sigmoid(800.0) < 1e-300);
        assert_abs_diff_eq!(neg_log_sigmoid(-800.0), 800.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
    }
}
