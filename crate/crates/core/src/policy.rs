//! Softmax policies over the action catalog with pluggable context
//! encodings, plus exact log-likelihood gradients for all of them.
//!
//! Logits are `v_a · x(s) + b_a` with item embeddings `v`, item bias `b`
//! and context vector `x(s)` determined by the encoder:
//!
//! * `OneHot`: `x(s) = e_s`. One free logit column per context, so the
//!   class is fully expressive and the weighted-likelihood objective is
//!   convex in the parameters.
//! * `Learned`: `x(s)` is a trained embedding row, giving the usual
//!   low-rank matrix-factorization scorer.
//! * `MeanHistory`: `x(s)` is the mean embedding of the context's prior
//!   items; gradients flow both through the scored item and through the
//!   history items that built `x(s)`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_categorical, stream};
use crate::tilt::{Policy, TabularPolicy};

const INIT_SCALE: f64 = 0.1;

/// Maps a context id to the feature vector the scorer consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ContextEncoder {
    OneHot {
        n_contexts: usize,
    },
    Learned {
        embeddings: Array2<f64>,
    },
    MeanHistory {
        histories: Vec<Vec<usize>>,
        dim: usize,
    },
}

impl ContextEncoder {
    pub fn n_contexts(&self) -> usize {
        match self {
            ContextEncoder::OneHot { n_contexts } => *n_contexts,
            ContextEncoder::Learned { embeddings } => embeddings.nrows(),
            ContextEncoder::MeanHistory { histories, .. } => histories.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ContextEncoder::OneHot { n_contexts } => *n_contexts,
            ContextEncoder::Learned { embeddings } => embeddings.ncols(),
            ContextEncoder::MeanHistory { dim, .. } => *dim,
        }
    }
}

/// Gradient buffer matching a [`ParametricPolicy`]'s parameters.
#[derive(Debug, Clone)]
pub struct PolicyGradient {
    pub item_embeddings: Array2<f64>,
    pub item_bias: Array1<f64>,
    pub context_embeddings: Option<Array2<f64>>,
}

impl PolicyGradient {
    pub fn zeros_like(policy: &ParametricPolicy) -> Self {
        PolicyGradient {
            item_embeddings: Array2::zeros(policy.item_embeddings.dim()),
            item_bias: Array1::zeros(policy.item_bias.len()),
            context_embeddings: match &policy.encoder {
                ContextEncoder::Learned { embeddings } => Some(Array2::zeros(embeddings.dim())),
                _ => None,
            },
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.item_embeddings.mapv_inplace(|g| g * c);
        self.item_bias.mapv_inplace(|g| g * c);
        if let Some(ctx) = &mut self.context_embeddings {
            ctx.mapv_inplace(|g| g * c);
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for &g in self.item_embeddings.iter().chain(self.item_bias.iter()) {
            m = m.max(g.abs());
        }
        if let Some(ctx) = &self.context_embeddings {
            for &g in ctx.iter() {
                m = m.max(g.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.item_embeddings.iter().all(|g| g.is_finite())
            && self.item_bias.iter().all(|g| g.is_finite())
            && self
                .context_embeddings
                .as_ref()
                .map_or(true, |c| c.iter().all(|g| g.is_finite()))
    }
}

/// Softmax policy `π(a|s) ∝ exp(v_a·x(s) + b_a)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametricPolicy {
    pub item_embeddings: Array2<f64>,
    pub item_bias: Array1<f64>,
    pub encoder: ContextEncoder,
}

impl ParametricPolicy {
    /// Tabular-capacity policy: one logit column per context.
    pub fn one_hot(n_contexts: usize, n_actions: usize, seed: u64) -> Self {
        Self::with_encoder(n_actions, ContextEncoder::OneHot { n_contexts }, seed)
    }

    /// Low-rank policy with trained context embeddings.
    pub fn learned(n_contexts: usize, n_actions: usize, dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "init-ctx");
        let normal = Normal::new(0.0, INIT_SCALE).expect("fixed scale");
        let embeddings = Array2::from_shape_fn((n_contexts, dim), |_| normal.sample(&mut rng));
        Self::with_encoder(n_actions, ContextEncoder::Learned { embeddings }, seed)
    }

    /// Policy whose context vector is the mean embedding of prior items.
    pub fn mean_history(
        n_actions: usize,
        dim: usize,
        histories: Vec<Vec<usize>>,
        seed: u64,
    ) -> Result<Self> {
        for (s, h) in histories.iter().enumerate() {
            if let Some(&bad) = h.iter().find(|&&i| i >= n_actions) {
                return Err(Error::parameter(format!(
                    "history for context {s} references item {bad} outside catalog of {n_actions}"
                )));
            }
        }
        Ok(Self::with_encoder(
            n_actions,
            ContextEncoder::MeanHistory { histories, dim },
            seed,
        ))
    }

    /// Rebuilds a policy from stored tensors, validating shape agreement.
    pub fn from_parts(
        item_embeddings: Array2<f64>,
        item_bias: Array1<f64>,
        encoder: ContextEncoder,
    ) -> Result<Self> {
        if item_bias.len() != item_embeddings.nrows() {
            return Err(Error::parameter(format!(
                "item bias has {} entries for {} items",
                item_bias.len(),
                item_embeddings.nrows()
            )));
        }
        if item_embeddings.ncols() != encoder.dim() {
            return Err(Error::parameter(format!(
                "item embeddings have width {} but the encoder produces {}-dim vectors",
                item_embeddings.ncols(),
                encoder.dim()
            )));
        }
        if let ContextEncoder::MeanHistory { histories, .. } = &encoder {
            let n_actions = item_embeddings.nrows();
            for h in histories {
                if let Some(&bad) = h.iter().find(|&&i| i >= n_actions) {
                    return Err(Error::parameter(format!(
                        "history references item {bad} outside catalog of {n_actions}"
                    )));
                }
            }
        }
        Ok(ParametricPolicy {
            item_embeddings,
            item_bias,
            encoder,
        })
    }

    fn with_encoder(n_actions: usize, encoder: ContextEncoder, seed: u64) -> Self {
        let dim = encoder.dim();
        let mut rng = stream(seed, "init-item");
        let normal = Normal::new(0.0, INIT_SCALE).expect("fixed scale");
        ParametricPolicy {
            item_embeddings: Array2::from_shape_fn((n_actions, dim), |_| normal.sample(&mut rng)),
            item_bias: Array1::zeros(n_actions),
            encoder,
        }
    }

    pub fn n_contexts(&self) -> usize {
        self.encoder.n_contexts()
    }

    pub fn param_count(&self) -> usize {
        self.item_embeddings.len()
            + self.item_bias.len()
            + match &self.encoder {
                ContextEncoder::Learned { embeddings } => embeddings.len(),
                _ => 0,
            }
    }

    /// Feature vector for a context.
    pub fn context_vec(&self, context: usize) -> Array1<f64> {
        match &self.encoder {
            ContextEncoder::OneHot { n_contexts } => {
                let mut x = Array1::zeros(*n_contexts);
                x[context] = 1.0;
                x
            }
            ContextEncoder::Learned { embeddings } => embeddings.row(context).to_owned(),
            ContextEncoder::MeanHistory { histories, dim } => {
                let h = &histories[context];
                let mut x = Array1::zeros(*dim);
                if h.is_empty() {
                    return x;
                }
                for &item in h {
                    x += &self.item_embeddings.row(item);
                }
                x / h.len() as f64
            }
        }
    }

    pub fn logits(&self, context: usize) -> Array1<f64> {
        let x = self.context_vec(context);
        self.item_embeddings.dot(&x) + &self.item_bias
    }

    pub fn log_probs(&self, context: usize) -> Array1<f64> {
        let mut z = self.logits(context);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&t| (t - max).exp()).sum::<f64>().ln();
        z.mapv_inplace(|t| t - lse);
        z
    }

    pub fn log_prob(&self, context: usize, action: usize) -> f64 {
        self.log_probs(context)[action]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> usize {
        let probs = self.action_probs(context);
        sample_categorical(rng, &probs)
    }

    /// Adds `scale · ∇_θ(−log π(action|context))` to `grad`: the logit
    /// gradient is `scale·(softmax(s) − e_action)`.
    pub fn accumulate_nll_grad(
        &self,
        context: usize,
        action: usize,
        scale: f64,
        grad: &mut PolicyGradient,
    ) {
        let logp = self.log_probs(context);
        let n_actions = self.item_bias.len();
        let mut g = Array1::zeros(n_actions);
        for a in 0..n_actions {
            g[a] = scale * logp[a].exp();
        }
        g[action] -= scale;
        self.accumulate_logits_grad(context, &g, grad);
    }

    /// Backpropagates a gradient `g` on the logits of `context` into the
    /// parameters: `∂b = g`, `∂v_a = g_a·x(s)`, plus `gx = Vᵀg` through
    /// `x(s)` into the encoder (the learned row, or spread over history
    /// items by multiplicity).
    pub fn accumulate_logits_grad(
        &self,
        context: usize,
        g: &Array1<f64>,
        grad: &mut PolicyGradient,
    ) {
        let x = self.context_vec(context);
        let n_actions = self.item_bias.len();
        grad.item_bias += g;
        match &self.encoder {
            ContextEncoder::OneHot { .. } => {
                // x is e_context: only that column of V receives gradient.
                for a in 0..n_actions {
                    grad.item_embeddings[[a, context]] += g[a];
                }
            }
            ContextEncoder::Learned { .. } => {
                for a in 0..n_actions {
                    let ga = g[a];
                    if ga != 0.0 {
                        for (d, &xd) in x.iter().enumerate() {
                            grad.item_embeddings[[a, d]] += ga * xd;
                        }
                    }
                }
                let gx = self.item_embeddings.t().dot(g);
                let ctx = grad
                    .context_embeddings
                    .as_mut()
                    .expect("learned encoder has context gradient");
                for (d, &v) in gx.iter().enumerate() {
                    ctx[[context, d]] += v;
                }
            }
            ContextEncoder::MeanHistory { histories, .. } => {
                for a in 0..n_actions {
                    let ga = g[a];
                    if ga != 0.0 {
                        for (d, &xd) in x.iter().enumerate() {
                            grad.item_embeddings[[a, d]] += ga * xd;
                        }
                    }
                }
                let h = &histories[context];
                if !h.is_empty() {
                    let gx = self.item_embeddings.t().dot(g) / h.len() as f64;
                    for &item in h {
                        for (d, &v) in gx.iter().enumerate() {
                            grad.item_embeddings[[item, d]] += v;
                        }
                    }
                }
            }
        }
    }

    /// Plain gradient step `θ ← θ − lr·grad`.
    pub fn apply_gradient(&mut self, grad: &PolicyGradient, lr: f64) {
        self.item_embeddings.zip_mut_with(&grad.item_embeddings, |p, &g| *p -= lr * g);
        self.item_bias.zip_mut_with(&grad.item_bias, |p, &g| *p -= lr * g);
        if let ContextEncoder::Learned { embeddings } = &mut self.encoder {
            let ctx = grad
                .context_embeddings
                .as_ref()
                .expect("learned encoder has context gradient");
            embeddings.zip_mut_with(ctx, |p, &g| *p -= lr * g);
        }
    }

    /// Materializes the conditional distributions for every context.
    pub fn to_tabular(&self) -> Result<TabularPolicy> {
        let n_contexts = self.n_contexts();
        let n_actions = self.item_bias.len();
        let mut probs = Array2::zeros((n_contexts, n_actions));
        for s in 0..n_contexts {
            let logp = self.log_probs(s);
            for a in 0..n_actions {
                probs[[s, a]] = logp[a].exp();
            }
        }
        TabularPolicy::from_rows_normalized(probs)
    }
}

impl Policy for ParametricPolicy {
    fn n_actions(&self) -> usize {
        self.item_bias.len()
    }

    fn action_scores(&self, context: usize) -> Vec<f64> {
        self.logits(context).to_vec()
    }

    fn action_probs(&self, context: usize) -> Vec<f64> {
        self.log_probs(context).mapv(f64::exp).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn finite_difference_check(policy: &ParametricPolicy, batch: &[(usize, usize, f64)]) {
        let loss = |p: &ParametricPolicy| -> f64 {
            batch
                .iter()
                .map(|&(s, a, w)| -w * p.log_prob(s, a))
                .sum()
        };

        let mut grad = PolicyGradient::zeros_like(policy);
        for &(s, a, w) in batch {
            policy.accumulate_nll_grad(s, a, w, &mut grad);
        }

        let h = 1e-5;
        let mut check = |get: &dyn Fn(&ParametricPolicy) -> f64,
                         set: &dyn Fn(&mut ParametricPolicy, f64),
                         analytic: f64| {
            let base = get(policy);
            let mut plus = policy.clone();
            set(&mut plus, base + h);
            let mut minus = policy.clone();
            set(&mut minus, base - h);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert_abs_diff_eq!(analytic, numeric, epsilon = 1e-6);
        };

        let (n_actions, dim) = policy.item_embeddings.dim();
        for a in 0..n_actions {
            for d in 0..dim {
                check(
                    &move |p| p.item_embeddings[[a, d]],
                    &move |p, v| p.item_embeddings[[a, d]] = v,
                    grad.item_embeddings[[a, d]],
                );
            }
            check(
                &move |p| p.item_bias[a],
                &move |p, v| p.item_bias[a] = v,
                grad.item_bias[a],
            );
        }
        if let ContextEncoder::Learned { embeddings } = &policy.encoder {
            let ctx_grad = grad.context_embeddings.as_ref().unwrap();
            for s in 0..embeddings.nrows() {
                for d in 0..embeddings.ncols() {
                    check(
                        &move |p| match &p.encoder {
                            ContextEncoder::Learned { embeddings } => embeddings[[s, d]],
                            _ => unreachable!(),
                        },
                        &move |p, v| match &mut p.encoder {
                            ContextEncoder::Learned { embeddings } => embeddings[[s, d]] = v,
                            _ => unreachable!(),
                        },
                        ctx_grad[[s, d]],
                    );
                }
            }
        }
    }

    fn toy_batch() -> Vec<(usize, usize, f64)> {
        vec![(0, 1, 1.3), (1, 0, 0.4), (2, 3, 2.0), (0, 2, 0.9)]
    }

    #[test]
    fn one_hot_gradient_matches_finite_differences() {
        let policy = ParametricPolicy::one_hot(3, 4, 5);
        finite_difference_check(&policy, &toy_batch());
    }

    #[test]
    fn learned_gradient_matches_finite_differences() {
        let policy = ParametricPolicy::learned(3, 4, 2, 5);
        finite_difference_check(&policy, &toy_batch());
    }

    #[test]
    fn mean_history_gradient_matches_finite_differences() {
        // Histories include repeats and an empty list to cover the
        // multiplicity and zero-vector paths.
        let histories = vec![vec![0, 2, 2], vec![1], vec![]];
        let policy = ParametricPolicy::mean_history(4, 2, histories, 5).unwrap();
        finite_difference_check(&policy, &toy_batch());
    }

    #[test]
    fn log_probs_normalize() {
        let policy = ParametricPolicy::learned(2, 5, 3, 1);
        for s in 0..2 {
            let sum: f64 = policy.action_probs(s).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tabular_snapshot_matches_log_probs() {
        let policy = ParametricPolicy::one_hot(3, 4, 9);
        let tab = policy.to_tabular().unwrap();
        for s in 0..3 {
            let lp = policy.log_probs(s);
            for a in 0..4 {
                assert_abs_diff_eq!(tab.prob(s, a), lp[a].exp(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_step_reduces_nll() {
        let mut policy = ParametricPolicy::learned(3, 4, 2, 7);
        let batch = toy_batch();
        let loss = |p: &ParametricPolicy| -> f64 {
            batch.iter().map(|&(s, a, w)| -w * p.log_prob(s, a)).sum()
        };
        let before = loss(&policy);
        let mut grad = PolicyGradient::zeros_like(&policy);
        for &(s, a, w) in &batch {
            policy.accumulate_nll_grad(s, a, w, &mut grad);
        }
        policy.apply_gradient(&grad, 0.05);
        assert!(loss(&policy) < before);
    }

    #[test]
    fn mean_history_rejects_out_of_catalog_items() {
        assert!(ParametricPolicy::mean_history(4, 2, vec![vec![4]], 0).is_err());
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let a = ParametricPolicy::learned(3, 4, 2, 11);
        let b = ParametricPolicy::learned(3, 4, 2, 11);
        let c = ParametricPolicy::learned(3, 4, 2, 12);
        assert_eq!(a.item_embeddings, b.item_embeddings);
        assert_ne!(a.item_embeddings, c.item_embeddings);
    }
}
