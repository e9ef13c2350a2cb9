//! Shipped benchmark setups with frozen seeds.
//!
//! Two scenarios back the out-of-the-box demos and the acceptance suite:
//!
//! * [`sweep_benchmark`]: a noisy low-rank environment logged so sparsely
//!   that most (context, action) cells carry at most one observation.
//!   Small λ latches onto single lucky draws, large λ degenerates to
//!   cloning, so value and ranking quality peak at an interior
//!   temperature.
//! * [`hack_benchmark`]: the same sparsity turned into a trap. A small
//!   head of broadly good items is logged often enough for reward
//!   averages to stabilize, while a long tail of poor items collects
//!   one-off noisy ratings. The highest observed ratings are then
//!   inflated tail flukes; a reward model fitted to the log inherits
//!   them, and policy optimizers that climb the model concentrate on
//!   those cells while true value collapses. Frequency-times-weight
//!   reweighting keeps the supervised algorithms anchored to the
//!   well-estimated head.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::dpo::DpoConfig;
use crate::env::{
    make_low_rank_env, sample_dataset, sample_test_cases, Catalog, NoiseModel, OfflineDataset,
    SyntheticEnvironment,
};
use crate::error::Result;
use crate::metrics::TestCase;
use crate::ppo::PpoConfig;
use crate::rm::RmConfig;
use crate::rng::stream;
use crate::tilt::TabularPolicy;
use crate::train::{Algorithm, EncoderKind, TrainConfig};

/// Temperature grid for the shipped sweep. The endpoints are extreme on
/// purpose: the interior peak must beat both.
pub const SWEEP_GRID: [f64; 6] = [0.05, 0.1, 0.5, 1.0, 5.0, 50.0];

const SWEEP_ENV_SEED: u64 = 101;
const SWEEP_DATA_SEED: u64 = 202;
const SWEEP_EVAL_SEED: u64 = 303;
const SWEEP_TRAIN_SEED: u64 = 404;

const SWEEP_CONTEXTS: usize = 20;
const SWEEP_ACTIONS: usize = 50;
const SWEEP_RANK: usize = 3;
const SWEEP_SKEW: f64 = 1.2;
/// Heavy rating noise relative to the [0, 1] reward range. With roughly
/// one observation per cell this is what small temperatures overfit.
const SWEEP_NOISE_SIGMA: f64 = 0.5;
const SWEEP_SAMPLES: usize = 1200;
const SWEEP_TEST_CASES: usize = 200;
const SWEEP_TEST_THRESHOLD: f64 = 0.8;

/// Everything needed to run the shipped temperature sweep.
#[derive(Debug, Clone)]
pub struct SweepBenchmark {
    pub env: SyntheticEnvironment,
    pub dataset: OfflineDataset,
    pub test_cases: Vec<TestCase>,
    /// Exponentially weighted base config; the sweep fills in λ per grid
    /// point. Swap the algorithm to `Bc` for the cloning reference run.
    pub base: TrainConfig,
    pub grid: Vec<f64>,
}

pub fn sweep_benchmark() -> Result<SweepBenchmark> {
    let env = make_low_rank_env(
        SWEEP_CONTEXTS,
        SWEEP_ACTIONS,
        SWEEP_RANK,
        1.0,
        SWEEP_SKEW,
        SWEEP_ENV_SEED,
    )?
    .with_noise(NoiseModel::Gaussian {
        sigma: SWEEP_NOISE_SIGMA,
    })?;
    let dataset = sample_dataset(&env, SWEEP_SAMPLES, SWEEP_DATA_SEED)?;
    let test_cases = sample_test_cases(&env, SWEEP_TEST_CASES, SWEEP_TEST_THRESHOLD, SWEEP_EVAL_SEED)?;
    let base = TrainConfig {
        epochs: 40,
        seed: SWEEP_TRAIN_SEED,
        ..TrainConfig::new(Algorithm::ExpRsft)
    };
    Ok(SweepBenchmark {
        env,
        dataset,
        test_cases,
        base,
        grid: SWEEP_GRID.to_vec(),
    })
}

/// Cloning reference for the sweep: identical schedule, weights all one.
pub fn sweep_bc_config() -> TrainConfig {
    TrainConfig {
        epochs: 40,
        seed: SWEEP_TRAIN_SEED,
        ..TrainConfig::new(Algorithm::Bc)
    }
}

const HACK_ENV_SEED: u64 = 505;
const HACK_DATA_SEED: u64 = 606;
const HACK_EVAL_SEED: u64 = 707;
const HACK_TRAIN_SEED: u64 = 808;
const HACK_RM_SEED: u64 = 909;
const HACK_PPO_SEED: u64 = 1010;
const HACK_DPO_SEED: u64 = 1111;

const HACK_CONTEXTS: usize = 8;
const HACK_ACTIONS: usize = 64;
/// Broadly decent items the logging policy concentrates on; everything
/// after them is niche.
const HACK_HEAD: usize = 12;
/// Niche items right after the head, adored by one collector context and
/// poor for everyone else.
const HACK_FANS: usize = 10;
/// The context whose taste covers all the niche items.
const HACK_COLLECTOR: usize = 7;
const HACK_SAMPLES: usize = 1000;
/// Rating noise. Head and niche cells collect enough observations to
/// average it away; ordinary tail cells usually hold a single draw.
const HACK_NOISE_SIGMA: f64 = 0.3;
const HACK_TEST_CASES: usize = 120;
const HACK_TEST_THRESHOLD: f64 = 0.6;
const HACK_LAMBDA: f64 = 0.4;
/// Embedding width shared by the policies and the reward model.
const HACK_POLICY_DIM: usize = 4;

fn is_fan_item(a: usize) -> bool {
    (HACK_HEAD..HACK_HEAD + HACK_FANS).contains(&a)
}

/// True reward of a head cell given the smooth base field in [0, 1].
fn head_reward(base: f64) -> f64 {
    0.2 + 0.5 * base
}

/// True reward of a tail cell: poor for everyone.
fn tail_reward(base: f64) -> f64 {
    0.03 + 0.22 * base
}

/// Everything needed to run the shipped reward-hacking demo.
#[derive(Debug, Clone)]
pub struct HackBenchmark {
    pub env: SyntheticEnvironment,
    pub dataset: OfflineDataset,
    pub test_cases: Vec<TestCase>,
    pub bc: TrainConfig,
    pub rsft: TrainConfig,
    pub exp_rsft: TrainConfig,
    pub rm: RmConfig,
    pub ppo: PpoConfig,
    pub dpo: DpoConfig,
}

fn hack_env() -> Result<SyntheticEnvironment> {
    let catalog = Catalog::new(HACK_CONTEXTS, HACK_ACTIONS)?;
    let mut rng = stream(HACK_ENV_SEED, "env");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let rank = 3;
    let u = Array2::from_shape_fn((HACK_CONTEXTS, rank), |_| normal.sample(&mut rng));
    let v = Array2::from_shape_fn((HACK_ACTIONS, rank), |_| normal.sample(&mut rng));
    let raw = u.dot(&v.t());
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let base = raw.mapv(|x| (x - lo) / (hi - lo));

    let reward = Array2::from_shape_fn((HACK_CONTEXTS, HACK_ACTIONS), |(s, a)| {
        if a < HACK_HEAD {
            head_reward(base[[s, a]])
        } else if is_fan_item(a) && s == HACK_COLLECTOR {
            0.85 + 0.1 * base[[s, a]]
        } else {
            tail_reward(base[[s, a]])
        }
    });

    // Logging. Ordinary contexts: a mild popularity and quality tilt
    // across the head, a flat low rate on the tail, and almost nothing on
    // the niche items. The collector context instead spends most of its
    // traffic on the niche items it loves. The niche ratings in the log
    // are therefore genuine and glowing, yet nearly all of them come from
    // one context: an item-level model lifts them everywhere, and that is
    // the trap the policy optimizers walk into.
    let weights = Array2::from_shape_fn((HACK_CONTEXTS, HACK_ACTIONS), |(s, a)| {
        let logit = if a < HACK_HEAD {
            -0.25 * ((a + 1) as f64).ln() + reward[[s, a]]
        } else if is_fan_item(a) {
            if s == HACK_COLLECTOR {
                1.2
            } else {
                -4.5
            }
        } else {
            -2.9
        };
        logit.exp()
    });
    let logging = TabularPolicy::from_rows_normalized(weights)?;
    let context_dist = vec![1.0 / HACK_CONTEXTS as f64; HACK_CONTEXTS];
    SyntheticEnvironment::new(
        catalog,
        reward,
        1.0,
        context_dist,
        logging,
        NoiseModel::Gaussian {
            sigma: HACK_NOISE_SIGMA,
        },
    )
}

pub fn hack_benchmark() -> Result<HackBenchmark> {
    let env = hack_env()?;
    let dataset = sample_dataset(&env, HACK_SAMPLES, HACK_DATA_SEED)?;
    let test_cases = sample_test_cases(&env, HACK_TEST_CASES, HACK_TEST_THRESHOLD, HACK_EVAL_SEED)?;

    // Low-rank policies, as a parametric recommender would use: items
    // share structure through their embeddings and a per-item bias, so a
    // policy optimizer that discovers a high-scoring item anywhere gets
    // pushed toward it everywhere. One-hot policies would instead collapse
    // each context onto its best already-frequent item and never resample
    // the thin cells where the model is wrong.
    let sft = TrainConfig {
        epochs: 140,
        seed: HACK_TRAIN_SEED,
        encoder: EncoderKind::Learned { dim: HACK_POLICY_DIM },
        ..TrainConfig::new(Algorithm::Bc)
    };
    let bc = sft.clone();
    let rsft = TrainConfig {
        algorithm: Algorithm::Rsft,
        // Noisy ratings go negative; cloning against a negatively
        // weighted example would push probability mass up elsewhere at
        // random, so those examples are dropped instead.
        clamp_negative_weights: true,
        ..sft.clone()
    };
    let exp_rsft = TrainConfig {
        algorithm: Algorithm::ExpRsft,
        lambda: Some(HACK_LAMBDA),
        ..sft
    };

    // Trained until it interpolates: batch-mean gradients move a bias fed
    // by a single observation very slowly, so memorizing the one-off tail
    // ratings (the whole point of the demo) needs small batches, a hot
    // rate, and many epochs.
    let rm = RmConfig {
        epochs: 400,
        learning_rate: 0.1,
        batch_size: 16,
        seed: HACK_RM_SEED,
        // Same embedding width as the policies.
        ..RmConfig::new(HACK_POLICY_DIM)
    };
    // The surrogate losses average over the whole sampled batch, so the
    // per-example step is learning_rate / (contexts_per_step · group) and
    // the headline rate has to be large to move the policy at all; ratio
    // clipping caps any single step regardless.
    let ppo = PpoConfig {
        steps: 180,
        group_size: 12,
        contexts_per_step: HACK_CONTEXTS,
        learning_rate: 8.0,
        seed: HACK_PPO_SEED,
        ..PpoConfig::new()
    };
    let dpo = DpoConfig {
        steps: 180,
        learning_rate: 8.0,
        seed: HACK_DPO_SEED,
        ..DpoConfig::new()
    };
    Ok(HackBenchmark {
        env,
        dataset,
        test_cases,
        bc,
        rsft,
        exp_rsft,
        rm,
        ppo,
        dpo,
    })
}
