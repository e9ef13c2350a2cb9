//! Synthetic contextual-bandit environments and offline logged datasets.
//!
//! An environment owns the true reward table, a context distribution, a
//! fully supported logging policy, and a reward-observation noise model.
//! Datasets are logged interactions sampled from that triple; trajectory
//! datasets reuse the same sampler with a horizon, drawing a fresh context
//! each step.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TestCase;
use crate::rng::{sample_categorical, stream};
use crate::tilt::{TabularPolicy, ROW_SUM_TOL};

/// Dense zero-based id spaces for contexts (users) and actions (items).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub n_contexts: usize,
    pub n_actions: usize,
}

impl Catalog {
    pub fn new(n_contexts: usize, n_actions: usize) -> Result<Self> {
        if n_contexts < 1 {
            return Err(Error::parameter("catalog needs at least one context"));
        }
        if n_actions < 2 {
            return Err(Error::parameter("catalog needs at least two actions"));
        }
        Ok(Catalog {
            n_contexts,
            n_actions,
        })
    }
}

/// How observed rewards are produced from true rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Observations equal true rewards.
    None,
    /// Additive zero-mean Gaussian noise.
    Gaussian { sigma: f64 },
    /// Additive noise uniform on `[-half_width, half_width]`; sub-Gaussian
    /// with parameter `half_width`.
    BoundedUniform { half_width: f64 },
    /// Gaussian perturbation followed by snapping to the nearest rating
    /// level. The snapping makes the effective noise discrete and slightly
    /// biased, which is intentional for rating-style data.
    DiscreteRating { levels: Vec<f64>, sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::parameter(format!(
                        "gaussian noise needs sigma > 0, got {sigma}"
                    )));
                }
                Ok(())
            }
            NoiseModel::BoundedUniform { half_width } => {
                if !(*half_width > 0.0) || !half_width.is_finite() {
                    return Err(Error::parameter(format!(
                        "bounded uniform noise needs half_width > 0, got {half_width}"
                    )));
                }
                Ok(())
            }
            NoiseModel::DiscreteRating { levels, sigma } => {
                if levels.is_empty() {
                    return Err(Error::parameter("rating grid must be non-empty"));
                }
                if levels.windows(2).any(|w| !(w[0] < w[1])) || levels.iter().any(|l| !l.is_finite())
                {
                    return Err(Error::parameter(
                        "rating grid must be finite and strictly increasing",
                    ));
                }
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::parameter(format!(
                        "rating noise needs sigma >= 0, got {sigma}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Sub-Gaussian parameter of the additive noise, where one applies.
    /// The rating model reports its pre-snap Gaussian sigma.
    pub fn sub_gaussian_sigma(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } => *sigma,
            NoiseModel::BoundedUniform { half_width } => *half_width,
            NoiseModel::DiscreteRating { sigma, .. } => *sigma,
        }
    }

    /// Hard bound on `|observed - true|` if the model has one.
    pub fn bound(&self) -> Option<f64> {
        match self {
            NoiseModel::None => Some(0.0),
            NoiseModel::BoundedUniform { half_width } => Some(*half_width),
            _ => None,
        }
    }

    /// Draws one observed reward for a true reward.
    pub fn observe<R: Rng + ?Sized>(&self, r_true: f64, rng: &mut R) -> f64 {
        match self {
            NoiseModel::None => r_true,
            NoiseModel::Gaussian { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                r_true + normal.sample(rng)
            }
            NoiseModel::BoundedUniform { half_width } => {
                r_true + rng.random_range(-*half_width..=*half_width)
            }
            NoiseModel::DiscreteRating { levels, sigma } => {
                let perturbed = if *sigma > 0.0 {
                    let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                    r_true + normal.sample(rng)
                } else {
                    r_true
                };
                nearest_level(levels, perturbed)
            }
        }
    }
}

/// Nearest grid level; exact midpoints resolve to the lower level.
fn nearest_level(levels: &[f64], x: f64) -> f64 {
    let mut best = levels[0];
    let mut best_d = (x - best).abs();
    for &l in &levels[1..] {
        let d = (x - l).abs();
        if d < best_d {
            best = l;
            best_d = d;
        }
    }
    best
}

/// Fully specified simulator: true rewards, context distribution, logging
/// policy and observation noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticEnvironment {
    pub catalog: Catalog,
    /// True expected reward per (context, action), within `[0, r_max]`.
    pub true_reward: Array2<f64>,
    pub r_max: f64,
    /// Initial/context distribution, sums to 1.
    pub context_dist: Vec<f64>,
    /// Behavior policy the logs are collected under; full support.
    pub logging_policy: TabularPolicy,
    pub noise: NoiseModel,
}

impl SyntheticEnvironment {
    pub fn new(
        catalog: Catalog,
        true_reward: Array2<f64>,
        r_max: f64,
        context_dist: Vec<f64>,
        logging_policy: TabularPolicy,
        noise: NoiseModel,
    ) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::parameter(format!("r_max must be positive, got {r_max}")));
        }
        if true_reward.dim() != (catalog.n_contexts, catalog.n_actions) {
            return Err(Error::parameter(format!(
                "reward table {:?} does not match catalog ({}, {})",
                true_reward.dim(),
                catalog.n_contexts,
                catalog.n_actions
            )));
        }
        if true_reward
            .iter()
            .any(|&r| !r.is_finite() || r < -ROW_SUM_TOL || r > r_max + ROW_SUM_TOL)
        {
            return Err(Error::parameter(format!(
                "true rewards must lie in [0, {r_max}]"
            )));
        }
        if context_dist.len() != catalog.n_contexts {
            return Err(Error::parameter(format!(
                "context distribution has {} entries, catalog has {}",
                context_dist.len(),
                catalog.n_contexts
            )));
        }
        let mass: f64 = context_dist.iter().sum();
        if context_dist.iter().any(|&p| !p.is_finite() || p < 0.0)
            || (mass - 1.0).abs() > ROW_SUM_TOL
        {
            return Err(Error::parameter(format!(
                "context distribution must be nonnegative and sum to 1, sum is {mass}"
            )));
        }
        if logging_policy.probs().dim() != (catalog.n_contexts, catalog.n_actions) {
            return Err(Error::parameter(
                "logging policy shape does not match catalog",
            ));
        }
        if !logging_policy.fully_supported() {
            return Err(Error::support(
                "logging policy must put positive probability on every action",
            ));
        }
        noise.validate()?;
        Ok(SyntheticEnvironment {
            catalog,
            // Reward rows are sliced in hot loops; rank-1 factor products
            // come out column-major, so normalize the layout here.
            true_reward: crate::tilt::standardize_layout(true_reward),
            r_max,
            context_dist,
            logging_policy,
            noise,
        })
    }

    /// Same environment with a different observation noise model.
    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        self.noise = noise;
        Ok(self)
    }
}

/// Pull of the logging policy's softmax toward high-reward actions in
/// [`make_low_rank_env`]. Small on purpose: logs should be informative but
/// far from greedy.
const REWARD_AFFINITY: f64 = 0.5;

/// Builds a low-rank environment: true rewards are a rank-`rank` factor
/// product rescaled to `[0, r_max]`; the logging policy is a softmax of
/// Zipf-like popularity scores (`popularity_skew` controls concentration)
/// plus a weak reward signal; contexts are uniform. No observation noise;
/// attach one with [`SyntheticEnvironment::with_noise`].
pub fn make_low_rank_env(
    n_contexts: usize,
    n_actions: usize,
    rank: usize,
    r_max: f64,
    popularity_skew: f64,
    seed: u64,
) -> Result<SyntheticEnvironment> {
    let catalog = Catalog::new(n_contexts, n_actions)?;
    if rank < 1 || rank > n_contexts.min(n_actions) {
        return Err(Error::parameter(format!(
            "rank {rank} must be in [1, min({n_contexts}, {n_actions})]"
        )));
    }
    if !(popularity_skew >= 0.0) || !popularity_skew.is_finite() {
        return Err(Error::parameter(format!(
            "popularity skew must be nonnegative, got {popularity_skew}"
        )));
    }
    let mut rng = stream(seed, "env");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let u = Array2::from_shape_fn((n_contexts, rank), |_| normal.sample(&mut rng));
    let v = Array2::from_shape_fn((n_actions, rank), |_| normal.sample(&mut rng));
    let mut rewards = u.dot(&v.t());

    let lo = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-12 {
        rewards.mapv_inplace(|m| (m - lo) / (hi - lo) * r_max);
    } else {
        rewards.fill(r_max / 2.0);
    }

    // Popularity ranks are a random permutation so low action ids carry no
    // special meaning.
    let mut order: Vec<usize> = (0..n_actions).collect();
    for i in (1..n_actions).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut popularity = vec![0.0; n_actions];
    for (a, &zipf_rank) in order.iter().enumerate() {
        popularity[a] = -popularity_skew * ((zipf_rank + 1) as f64).ln();
    }

    let mut logits = Array2::zeros((n_contexts, n_actions));
    for s in 0..n_contexts {
        for a in 0..n_actions {
            logits[[s, a]] = popularity[a] + REWARD_AFFINITY * rewards[[s, a]] / r_max;
        }
    }
    let mut weights = logits;
    for mut row in weights.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|t| (t - max).exp());
    }
    let logging_policy = TabularPolicy::from_rows_normalized(weights)?;

    let context_dist = vec![1.0 / n_contexts as f64; n_contexts];
    SyntheticEnvironment::new(
        catalog,
        rewards,
        r_max,
        context_dist,
        logging_policy,
        NoiseModel::None,
    )
}

/// One logged (context, action, observed reward) record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedInteraction {
    #[serde(rename = "s")]
    pub context: usize,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "r")]
    pub observed_reward: f64,
}

/// A fixed-horizon episode; contexts are drawn fresh each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<LoggedInteraction>,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|x| x.observed_reward).sum()
    }
}

/// Logged data plus the catalog it was collected under. `trajectories`
/// is present only for episode-structured logs; `interactions` always
/// holds the flattened step records. `histories`, when present, gives the
/// prior-item list per context (used by history-based encoders).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub catalog: Catalog,
    pub interactions: Vec<LoggedInteraction>,
    pub trajectories: Option<Vec<Trajectory>>,
    pub histories: Option<Vec<Vec<usize>>>,
}

impl OfflineDataset {
    pub fn from_interactions(
        catalog: Catalog,
        interactions: Vec<LoggedInteraction>,
    ) -> Result<Self> {
        validate_records(&catalog, &interactions)?;
        Ok(OfflineDataset {
            catalog,
            interactions,
            trajectories: None,
            histories: None,
        })
    }

    pub fn from_trajectories(catalog: Catalog, trajectories: Vec<Trajectory>) -> Result<Self> {
        let interactions: Vec<LoggedInteraction> = trajectories
            .iter()
            .flat_map(|t| t.steps.iter().copied())
            .collect();
        validate_records(&catalog, &interactions)?;
        Ok(OfflineDataset {
            catalog,
            interactions,
            trajectories: Some(trajectories),
            histories: None,
        })
    }

    pub fn n(&self) -> usize {
        self.interactions.len()
    }

    /// Empirical context frequencies over the flattened records.
    pub fn empirical_context_dist(&self) -> Vec<f64> {
        let mut dist = vec![0.0; self.catalog.n_contexts];
        for x in &self.interactions {
            dist[x.context] += 1.0;
        }
        let n = self.interactions.len().max(1) as f64;
        for d in &mut dist {
            *d /= n;
        }
        dist
    }
}

fn validate_records(catalog: &Catalog, records: &[LoggedInteraction]) -> Result<()> {
    for (i, x) in records.iter().enumerate() {
        if x.context >= catalog.n_contexts || x.action >= catalog.n_actions {
            return Err(Error::parameter(format!(
                "record {i} references (context {}, action {}) outside catalog ({}, {})",
                x.context, x.action, catalog.n_contexts, catalog.n_actions
            )));
        }
        if !x.observed_reward.is_finite() {
            return Err(Error::parameter(format!(
                "record {i} has non-finite reward {}",
                x.observed_reward
            )));
        }
    }
    Ok(())
}

/// Samples `n_trajectories` episodes of length `horizon` under the logging
/// policy. Sampling order is fixed: per step, context then action from the
/// "data" stream, observation noise from the "noise" stream.
pub fn sample_trajectories(
    env: &SyntheticEnvironment,
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_trajectories == 0 || horizon == 0 {
        return Err(Error::parameter(
            "need at least one trajectory and a positive horizon",
        ));
    }
    let mut data_rng = stream(seed, "data");
    let mut noise_rng = stream(seed, "noise");
    let mut trajectories = Vec::with_capacity(n_trajectories);
    for _ in 0..n_trajectories {
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let s = sample_categorical(&mut data_rng, &env.context_dist);
            let row = env.logging_policy.row(s);
            let a = sample_categorical(&mut data_rng, row.as_slice().expect("contiguous row"));
            let r = env.noise.observe(env.true_reward[[s, a]], &mut noise_rng);
            steps.push(LoggedInteraction {
                context: s,
                action: a,
                observed_reward: r,
            });
        }
        trajectories.push(Trajectory { steps });
    }
    OfflineDataset::from_trajectories(env.catalog, trajectories)
}

/// Samples `n_samples` i.i.d. logged interactions. Draw-for-draw identical
/// to [`sample_trajectories`] with horizon 1, minus the episode structure.
pub fn sample_dataset(
    env: &SyntheticEnvironment,
    n_samples: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let with_episodes = sample_trajectories(env, n_samples, 1, seed)?;
    OfflineDataset::from_interactions(env.catalog, with_episodes.interactions)
}

/// Draws evaluation cases: contexts from the environment's distribution,
/// targets from the logging policy, kept only when the target's true
/// reward reaches `threshold`. Mirrors held-out relevant interactions in
/// rating data.
pub fn sample_test_cases(
    env: &SyntheticEnvironment,
    n_cases: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<TestCase>> {
    if n_cases == 0 {
        return Err(Error::parameter("need at least one test case"));
    }
    let max_r = env.true_reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if threshold > max_r {
        return Err(Error::parameter(format!(
            "threshold {threshold} exceeds the largest true reward {max_r}; no case can qualify"
        )));
    }
    let mut rng = stream(seed, "eval");
    let mut cases = Vec::with_capacity(n_cases);
    let mut attempts: usize = 0;
    let budget = n_cases.saturating_mul(10_000);
    while cases.len() < n_cases {
        attempts += 1;
        if attempts > budget {
            return Err(Error::parameter(format!(
                "could not draw {n_cases} cases with reward >= {threshold} in {budget} attempts"
            )));
        }
        let s = sample_categorical(&mut rng, &env.context_dist);
        let row = env.logging_policy.row(s);
        let a = sample_categorical(&mut rng, row.as_slice().expect("contiguous row"));
        let r = env.true_reward[[s, a]];
        if r >= threshold {
            cases.push(TestCase {
                context: s,
                target: a,
                target_rating: r,
            });
        }
    }
    Ok(cases)
}

/// Maximum-likelihood tabular policy of a dataset: per-context action
/// frequencies, uniform where a context was never logged.
pub fn empirical_policy(dataset: &OfflineDataset) -> Result<TabularPolicy> {
    let (n_contexts, n_actions) = (dataset.catalog.n_contexts, dataset.catalog.n_actions);
    let mut counts = Array2::<f64>::zeros((n_contexts, n_actions));
    for x in &dataset.interactions {
        counts[[x.context, x.action]] += 1.0;
    }
    for mut row in counts.rows_mut() {
        if row.sum() == 0.0 {
            row.fill(1.0);
        }
    }
    TabularPolicy::from_rows_normalized(counts)
}

/// Per-pair observed-reward means and counts; mean is 0 where count is 0.
#[derive(Debug, Clone)]
pub struct MeanRewardTable {
    pub mean: Array2<f64>,
    pub count: Array2<u64>,
}

pub fn empirical_mean_rewards(dataset: &OfflineDataset) -> MeanRewardTable {
    let (n_contexts, n_actions) = (dataset.catalog.n_contexts, dataset.catalog.n_actions);
    let mut sum = Array2::<f64>::zeros((n_contexts, n_actions));
    let mut count = Array2::<u64>::zeros((n_contexts, n_actions));
    for x in &dataset.interactions {
        sum[[x.context, x.action]] += x.observed_reward;
        count[[x.context, x.action]] += 1;
    }
    let mut mean = sum;
    for ((s, a), m) in mean.indexed_iter_mut() {
        let c = count[[s, a]];
        if c > 0 {
            *m /= c as f64;
        }
    }
    MeanRewardTable { mean, count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tilt::{policy_value, Policy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_rank_env_satisfies_contracts() {
        let env = make_low_rank_env(12, 30, 3, 2.0, 1.0, 42).unwrap();
        assert_eq!(env.true_reward.dim(), (12, 30));
        for &r in env.true_reward.iter() {
            assert!((0.0..=2.0).contains(&r));
        }
        for s in 0..12 {
            let sum: f64 = env.logging_policy.row(s).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {s} sums to {sum}");
        }
        assert!(env.logging_policy.fully_supported());
        assert_abs_diff_eq!(env.context_dist.iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        // Rescaling touches both ends of [0, r_max].
        let lo = env.true_reward.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = env.true_reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn low_rank_env_is_seed_deterministic() {
        let a = make_low_rank_env(8, 15, 2, 1.0, 1.0, 7).unwrap();
        let b = make_low_rank_env(8, 15, 2, 1.0, 1.0, 7).unwrap();
        let c = make_low_rank_env(8, 15, 2, 1.0, 1.0, 8).unwrap();
        assert_eq!(a.true_reward, b.true_reward);
        assert_eq!(a.logging_policy.probs(), b.logging_policy.probs());
        assert_ne!(a.true_reward, c.true_reward);
    }

    #[test]
    fn popularity_skew_concentrates_logging_policy() {
        let flat = make_low_rank_env(10, 40, 3, 1.0, 0.0, 5).unwrap();
        let skewed = make_low_rank_env(10, 40, 3, 1.0, 3.0, 5).unwrap();
        let top_mass = |env: &SyntheticEnvironment| {
            let mut marginal = vec![0.0; 40];
            for s in 0..10 {
                for (a, &p) in env.logging_policy.row(s).iter().enumerate() {
                    marginal[a] += p * env.context_dist[s];
                }
            }
            marginal.iter().cloned().fold(0.0, f64::max)
        };
        assert!(top_mass(&skewed) > 2.0 * top_mass(&flat));
    }

    #[test]
    fn logging_policy_prefers_rewarding_actions_slightly() {
        let env = make_low_rank_env(10, 40, 3, 1.0, 0.0, 5).unwrap();
        let v_log = policy_value(&env, &env.logging_policy).unwrap().expected;
        let uniform = TabularPolicy::uniform(10, 40);
        let v_uni = policy_value(&env, &uniform).unwrap().expected;
        assert!(v_log > v_uni);
    }

    #[test]
    fn rank_bounds_are_enforced() {
        assert!(make_low_rank_env(4, 6, 0, 1.0, 1.0, 1).is_err());
        assert!(make_low_rank_env(4, 6, 5, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn noise_models_sample_as_specified() {
        let mut rng = stream(9, "test");
        let gaussian = NoiseModel::Gaussian { sigma: 0.5 };
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| gaussian.observe(2.0, &mut rng) - 2.0).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var.sqrt() - 0.5).abs() < 0.01);

        let bounded = NoiseModel::BoundedUniform { half_width: 0.3 };
        for _ in 0..10_000 {
            let xi = bounded.observe(1.0, &mut rng) - 1.0;
            assert!(xi.abs() <= 0.3);
        }

        let rating = NoiseModel::DiscreteRating {
            levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sigma: 0.2,
        };
        for _ in 0..1_000 {
            let obs = rating.observe(0.6, &mut rng);
            assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&obs));
        }
    }

    #[test]
    fn noise_validation_rejects_bad_parameters() {
        assert!(NoiseModel::Gaussian { sigma: 0.0 }.validate().is_err());
        assert!(NoiseModel::BoundedUniform { half_width: -0.1 }.validate().is_err());
        assert!(NoiseModel::DiscreteRating { levels: vec![], sigma: 0.1 }
            .validate()
            .is_err());
        assert!(NoiseModel::DiscreteRating { levels: vec![1.0, 0.5], sigma: 0.1 }
            .validate()
            .is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let env = make_low_rank_env(6, 9, 2, 1.0, 1.0, 3).unwrap();
        let a = sample_dataset(&env, 500, 11).unwrap();
        let b = sample_dataset(&env, 500, 11).unwrap();
        assert_eq!(a.interactions, b.interactions);
        for x in &a.interactions {
            assert!(x.context < 6 && x.action < 9);
            assert_abs_diff_eq!(
                x.observed_reward,
                env.true_reward[[x.context, x.action]],
                epsilon = 0.0
            );
        }
        let dist = a.empirical_context_dist();
        assert_abs_diff_eq!(dist.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn horizon_one_trajectories_flatten_to_the_bandit_dataset() {
        let env = make_low_rank_env(5, 8, 2, 1.0, 1.0, 3)
            .unwrap()
            .with_noise(NoiseModel::Gaussian { sigma: 0.2 })
            .unwrap();
        let bandit = sample_dataset(&env, 200, 17).unwrap();
        let episodic = sample_trajectories(&env, 200, 1, 17).unwrap();
        assert_eq!(bandit.interactions, episodic.interactions);
        assert!(bandit.trajectories.is_none());
        let trajs = episodic.trajectories.as_ref().unwrap();
        assert!(trajs.iter().all(|t| t.steps.len() == 1));
    }

    #[test]
    fn trajectory_returns_sum_their_steps() {
        let env = make_low_rank_env(4, 6, 2, 1.0, 1.0, 3)
            .unwrap()
            .with_noise(NoiseModel::Gaussian { sigma: 0.3 })
            .unwrap();
        let data = sample_trajectories(&env, 50, 7, 5).unwrap();
        for t in data.trajectories.as_ref().unwrap() {
            assert_eq!(t.steps.len(), 7);
            let sum: f64 = t.steps.iter().map(|x| x.observed_reward).sum();
            assert_abs_diff_eq!(t.total_return(), sum, epsilon = 0.0);
        }
        assert_eq!(data.n(), 350);
    }

    #[test]
    fn dataset_rejects_out_of_range_records() {
        let catalog = Catalog::new(2, 3).unwrap();
        let bad = vec![LoggedInteraction {
            context: 2,
            action: 0,
            observed_reward: 0.5,
        }];
        assert!(OfflineDataset::from_interactions(catalog, bad).is_err());
    }

    #[test]
    fn test_cases_respect_the_threshold() {
        let env = make_low_rank_env(6, 10, 2, 1.0, 1.0, 21).unwrap();
        let cases = sample_test_cases(&env, 100, 0.7, 4).unwrap();
        assert_eq!(cases.len(), 100);
        for c in &cases {
            assert!(c.target_rating >= 0.7);
            assert_abs_diff_eq!(
                c.target_rating,
                env.true_reward[[c.context, c.target]],
                epsilon = 0.0
            );
        }
        assert!(sample_test_cases(&env, 10, 2.0, 4).is_err());
    }

    #[test]
    fn empirical_tables_match_hand_counts() {
        let catalog = Catalog::new(2, 3).unwrap();
        let rec = |s, a, r| LoggedInteraction {
            context: s,
            action: a,
            observed_reward: r,
        };
        let data = OfflineDataset::from_interactions(
            catalog,
            vec![rec(0, 0, 1.0), rec(0, 0, 0.0), rec(0, 2, 0.5), rec(0, 2, 0.7)],
        )
        .unwrap();

        let pol = empirical_policy(&data).unwrap();
        assert_abs_diff_eq!(pol.prob(0, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pol.prob(0, 2), 0.5, epsilon = 1e-15);
        // Unseen context falls back to uniform.
        for a in 0..3 {
            assert_abs_diff_eq!(pol.prob(1, a), 1.0 / 3.0, epsilon = 1e-15);
        }

        let table = empirical_mean_rewards(&data);
        assert_abs_diff_eq!(table.mean[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(table.mean[[0, 2]], 0.6, epsilon = 1e-15);
        assert_eq!(table.count[[0, 0]], 2);
        assert_eq!(table.count[[1, 1]], 0);
        assert_eq!(table.mean[[1, 1]], 0.0);
    }
}
