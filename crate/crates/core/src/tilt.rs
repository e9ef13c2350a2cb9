//! Exact exponential tilting of tabular policies and the divergences used
//! to compare policies.
//!
//! The tilted policy multiplies each base probability by `exp(r(s,a)/λ)`
//! and renormalizes per context. All arithmetic runs in the log domain with
//! a per-row max shift, so inputs with `|r/λ|` up to ~700 stay finite.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::env::SyntheticEnvironment;
use crate::error::{Error, Result};

/// Anything that can score and rank the action catalog for a context.
/// `action_scores` drives ranking metrics; `action_probs` must be a proper
/// distribution over actions.
pub trait Policy {
    fn n_actions(&self) -> usize;
    fn action_scores(&self, context: usize) -> Vec<f64>;
    fn action_probs(&self, context: usize) -> Vec<f64>;
}

/// Explicit conditional distribution over actions for every context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: Array2<f64>,
}

/// Row sums may drift from 1 by accumulated rounding; this is the slack a
/// *validating* constructor accepts.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Rows of the stored table must be contiguous (several hot paths slice
/// them); `dot` and transposed views can produce column-major arrays, so
/// constructors normalize the layout.
pub(crate) fn standardize_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl TabularPolicy {
    /// Wraps a probability table, requiring each row to already sum to 1
    /// within [`ROW_SUM_TOL`].
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::parameter(format!(
                        "policy row {s} has invalid probability {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::parameter(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(TabularPolicy {
            probs: standardize_layout(probs),
        })
    }

    /// Wraps a table of nonnegative weights, normalizing each row. Use this
    /// when rows come out of floating-point pipelines whose sums drift more
    /// than [`ROW_SUM_TOL`].
    pub fn from_rows_normalized(weights: Array2<f64>) -> Result<Self> {
        let mut probs = standardize_layout(weights);
        for (s, mut row) in probs.rows_mut().into_iter().enumerate() {
            let mut sum = 0.0;
            for &p in row.iter() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::parameter(format!(
                        "policy row {s} has invalid weight {p}"
                    )));
                }
                sum += p;
            }
            if sum <= 0.0 {
                return Err(Error::parameter(format!("policy row {s} sums to zero")));
            }
            row.mapv_inplace(|p| p / sum);
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(n_contexts: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        TabularPolicy {
            probs: Array2::from_elem((n_contexts, n_actions), p),
        }
    }

    pub fn n_contexts(&self) -> usize {
        self.probs.nrows()
    }

    pub fn row(&self, context: usize) -> ArrayView1<'_, f64> {
        self.probs.row(context)
    }

    pub fn prob(&self, context: usize, action: usize) -> f64 {
        self.probs[[context, action]]
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    /// True if every entry is strictly positive (tilting requires this).
    pub fn fully_supported(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }
}

impl Policy for TabularPolicy {
    fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    fn action_scores(&self, context: usize) -> Vec<f64> {
        self.row(context).to_vec()
    }

    fn action_probs(&self, context: usize) -> Vec<f64> {
        self.row(context).to_vec()
    }
}

/// Tilted policy together with the per-context partition function
/// `Z(s) = Σ_a π_base(a|s)·exp(r(s,a)/λ)`.
#[derive(Debug, Clone)]
pub struct TiltResult {
    pub policy: TabularPolicy,
    pub partition: Vec<f64>,
    pub log_partition: Vec<f64>,
    pub lambda: f64,
}

/// Tilts a single probability row by a reward row. Returns the tilted
/// probabilities and `log Z`.
pub fn exp_tilt_row(base: &[f64], rewards: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::parameter(format!(
            "tilt temperature must be positive and finite, got {lambda}"
        )));
    }
    if base.len() != rewards.len() {
        return Err(Error::parameter(format!(
            "row length mismatch: {} probabilities vs {} rewards",
            base.len(),
            rewards.len()
        )));
    }
    let mut logits = Vec::with_capacity(base.len());
    for (a, (&p, &r)) in base.iter().zip(rewards).enumerate() {
        if p <= 0.0 {
            return Err(Error::support(format!(
                "base policy has zero probability at action {a}; tilt is undefined there"
            )));
        }
        if !r.is_finite() {
            return Err(Error::parameter(format!(
                "reward for action {a} is not finite: {r}"
            )));
        }
        logits.push(p.ln() + r / lambda);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&t| (t - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let probs = logits.iter().map(|&t| (t - log_z).exp()).collect();
    Ok((probs, log_z))
}

/// Tilts every context of `base` by `rewards` at temperature `lambda`:
/// `π_λ(a|s) ∝ π_base(a|s)·exp(r(s,a)/λ)`.
pub fn exp_tilt(base: &TabularPolicy, rewards: &Array2<f64>, lambda: f64) -> Result<TiltResult> {
    if rewards.dim() != base.probs().dim() {
        return Err(Error::parameter(format!(
            "reward table {:?} does not match policy table {:?}",
            rewards.dim(),
            base.probs().dim()
        )));
    }
    // Callers may hand in column-major tables (e.g. products of transposed
    // factors); give the per-row kernel contiguous memory either way.
    let standardized;
    let rewards = if rewards.is_standard_layout() {
        rewards
    } else {
        standardized = rewards.as_standard_layout().into_owned();
        &standardized
    };
    let (n_contexts, n_actions) = base.probs().dim();
    let mut out = Array2::zeros((n_contexts, n_actions));
    let mut partition = Vec::with_capacity(n_contexts);
    let mut log_partition = Vec::with_capacity(n_contexts);
    for s in 0..n_contexts {
        let (row, log_z) = exp_tilt_row(
            base.row(s).as_slice().expect("contiguous row"),
            rewards.row(s).as_slice().expect("contiguous row"),
            lambda,
        )?;
        for (a, p) in row.into_iter().enumerate() {
            out[[s, a]] = p;
        }
        partition.push(log_z.exp());
        log_partition.push(log_z);
    }
    Ok(TiltResult {
        policy: TabularPolicy::from_rows_normalized(out)?,
        partition,
        log_partition,
        lambda,
    })
}

/// Per-context and initial-distribution-averaged expected true reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueProfile {
    pub per_context: Vec<f64>,
    pub expected: f64,
}

/// Expected true reward of `policy` in `env`, per context and averaged
/// over the environment's context distribution.
pub fn policy_value<P: Policy>(env: &SyntheticEnvironment, policy: &P) -> Result<ValueProfile> {
    let n_contexts = env.catalog.n_contexts;
    if policy.n_actions() != env.catalog.n_actions {
        return Err(Error::parameter(format!(
            "policy has {} actions, environment has {}",
            policy.n_actions(),
            env.catalog.n_actions
        )));
    }
    let mut per_context = Vec::with_capacity(n_contexts);
    let mut expected = 0.0;
    for s in 0..n_contexts {
        let probs = policy.action_probs(s);
        let v: f64 = probs
            .iter()
            .zip(env.true_reward.row(s))
            .map(|(p, r)| p * r)
            .sum();
        expected += env.context_dist[s] * v;
        per_context.push(v);
    }
    Ok(ValueProfile {
        per_context,
        expected,
    })
}

/// True-reward advantage of `action` in `context` relative to the policy's
/// expected value there.
pub fn advantage<P: Policy>(
    env: &SyntheticEnvironment,
    policy: &P,
    context: usize,
    action: usize,
) -> Result<f64> {
    let profile = policy_value(env, policy)?;
    Ok(env.true_reward[[context, action]] - profile.per_context[context])
}

/// Total variation distance `0.5·Σ|p−q|` between two distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Maximum per-context total variation between two tabular policies.
pub fn max_tv(p: &TabularPolicy, q: &TabularPolicy) -> f64 {
    (0..p.n_contexts())
        .map(|s| {
            tv_distance(
                p.row(s).as_slice().expect("contiguous row"),
                q.row(s).as_slice().expect("contiguous row"),
            )
        })
        .fold(0.0, f64::max)
}

/// KL divergence `Σ p·ln(p/q)` with the convention `0·ln 0 = 0`. Fails if
/// `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    debug_assert_eq!(p.len(), q.len());
    let mut kl = 0.0;
    for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa == 0.0 {
            continue;
        }
        if qa == 0.0 {
            return Err(Error::support(format!(
                "KL undefined: action {a} has mass {pa} under p but zero under q"
            )));
        }
        kl += pa * (pa / qa).ln();
    }
    Ok(kl)
}

/// Maximum per-context KL between two tabular policies.
pub fn max_kl(p: &TabularPolicy, q: &TabularPolicy) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..p.n_contexts() {
        let kl = kl_divergence(
            p.row(s).as_slice().expect("contiguous row"),
            q.row(s).as_slice().expect("contiguous row"),
        )?;
        worst = worst.max(kl);
    }
    Ok(worst)
}

/// Max-norm deviations of the tilt under the two transformations that
/// should leave it unchanged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// `max |tilt(r) − tilt(r + b(s))|` for a per-context shift `b`.
    pub shift_deviation: f64,
    /// `max |tilt(r, λ) − tilt(c·r, c·λ)|` for a scale `c > 0`.
    pub scale_deviation: f64,
}

/// Verifies that per-context reward shifts cancel and that rescaling
/// rewards together with the temperature is a no-op.
pub fn invariance_check(
    base: &TabularPolicy,
    rewards: &Array2<f64>,
    lambda: f64,
    shift: &[f64],
    scale: f64,
) -> Result<InvarianceReport> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::parameter(format!(
            "reward scale must be positive and finite, got {scale}"
        )));
    }
    if shift.len() != base.n_contexts() {
        return Err(Error::parameter(format!(
            "shift vector has length {}, expected one entry per context ({})",
            shift.len(),
            base.n_contexts()
        )));
    }
    let reference = exp_tilt(base, rewards, lambda)?;

    let mut shifted = rewards.clone();
    for (s, mut row) in shifted.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|r| r + shift[s]);
    }
    let shift_tilt = exp_tilt(base, &shifted, lambda)?;

    let scaled = rewards.mapv(|r| r * scale);
    let scale_tilt = exp_tilt(base, &scaled, lambda * scale)?;

    let max_abs = |a: &TabularPolicy, b: &TabularPolicy| {
        a.probs()
            .iter()
            .zip(b.probs())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok(InvarianceReport {
        shift_deviation: max_abs(&reference.policy, &shift_tilt.policy),
        scale_deviation: max_abs(&reference.policy, &scale_tilt.policy),
    })
}
