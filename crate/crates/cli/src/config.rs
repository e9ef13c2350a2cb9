//! One serializable experiment configuration shared by every subcommand.
//!
//! Values resolve in three layers: command-line flags override fields from
//! the `--config` JSON file, which overrides the built-in defaults. The
//! resolved configuration is what runs, and it is recorded verbatim in each
//! run's `manifest.json` so a run can be reproduced from its output
//! directory alone.
//!
//! The master `seed` is the only seed: it overwrites the `seed` fields of
//! the nested training, reward-model, PPO and DPO configurations during
//! resolution, and the library derives independent named streams ("env",
//! "data", "noise", "train", "eval", ...) from it per stage.

use std::path::PathBuf;

use exp_rsft::benchmark::SWEEP_GRID;
use exp_rsft::dpo::DpoConfig;
use exp_rsft::env::NoiseModel;
use exp_rsft::movielens::IngestConfig;
use exp_rsft::ppo::PpoConfig;
use exp_rsft::rm::RmConfig;
use exp_rsft::train::{Algorithm, TrainConfig};
use serde::{Deserialize, Serialize};

/// Temperature used when exponential weighting is requested without one.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Geometry of the synthetic environment used when no dataset directory or
/// environment file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub n_contexts: usize,
    pub n_actions: usize,
    /// Rank of the true reward matrix.
    pub rank: usize,
    pub r_max: f64,
    /// Popularity skew of the logging policy; larger concentrates the log.
    pub popularity_skew: f64,
    pub noise: NoiseModel,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec {
            n_contexts: 20,
            n_actions: 50,
            rank: 3,
            r_max: 1.0,
            popularity_skew: 1.2,
            noise: NoiseModel::Gaussian { sigma: 0.5 },
        }
    }
}

/// Held-out ranking evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub n_test_cases: usize,
    /// Minimum true reward for an action to qualify as a relevant target.
    pub threshold: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            n_test_cases: 200,
            threshold: 0.8,
        }
    }
}

/// Parameters for the `verify-bounds` modes. Each mode reads its own
/// subset; the defaults match the shipped verification suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSettings {
    /// Random tabular instances for the exact improvement sweep.
    pub n_instances: usize,
    pub max_contexts: usize,
    pub max_actions: usize,
    pub exact_lambdas: Vec<f64>,
    /// Gaussian observation noise for the high-probability check.
    pub sigma: f64,
    pub hp_contexts: usize,
    pub hp_actions: usize,
    /// Allowed failure probability of the high-probability bound.
    pub delta: f64,
    pub hp_lambdas: Vec<f64>,
    pub hp_trials: usize,
    /// Uniform noise half-widths for the bounded-noise guarantees.
    pub noise_bounds: Vec<f64>,
    pub sure_lambdas: Vec<f64>,
    pub sure_trials: usize,
    pub sure_contexts: usize,
    pub sure_actions: usize,
    /// Random parameter draws for the temperature calibration round trip.
    pub n_draws: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            n_instances: 1000,
            max_contexts: 20,
            max_actions: 50,
            exact_lambdas: vec![0.1, 1.0, 10.0],
            sigma: 1.0,
            hp_contexts: 2,
            hp_actions: 1000,
            delta: 0.05,
            hp_lambdas: vec![0.5, 1.0, 5.0],
            hp_trials: 10_000,
            noise_bounds: vec![0.05, 0.1, 0.3],
            sure_lambdas: vec![0.2, 1.0, 5.0],
            sure_trials: 1000,
            sure_contexts: 4,
            sure_actions: 12,
            n_draws: 100,
        }
    }
}

/// Everything a run needs: the data source (synthetic spec, saved
/// environment or saved dataset), training and baseline settings,
/// verification parameters, evaluation settings, output directory and the
/// master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub env: EnvSpec,
    /// Directory with a saved dataset (`manifest.json` + `data.ndjson`);
    /// when set it replaces the synthetic environment as the data source.
    pub dataset: Option<PathBuf>,
    /// JSON file holding a full simulator; overrides `env` when set.
    pub env_file: Option<PathBuf>,
    /// Logged interactions (or trajectories, when `horizon` > 1) to draw.
    pub n_samples: usize,
    /// Trajectory length for data generation; above 1 switches to episodes.
    pub horizon: Option<usize>,
    pub train: TrainConfig,
    pub rm: RmConfig,
    pub ppo: PpoConfig,
    pub dpo: DpoConfig,
    /// Temperature grid for `sweep-lambda` (and `verify-bounds` when the
    /// `--grid` flag overrides a mode's default temperatures).
    pub grid: Vec<f64>,
    pub metrics: MetricSettings,
    pub bounds: BoundSettings,
    pub ingest: IngestConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            env: EnvSpec::default(),
            dataset: None,
            env_file: None,
            n_samples: 1200,
            horizon: None,
            train: TrainConfig::new(Algorithm::ExpRsft),
            rm: RmConfig::new(4),
            ppo: PpoConfig::new(),
            dpo: DpoConfig::new(),
            grid: SWEEP_GRID.to_vec(),
            metrics: MetricSettings::default(),
            bounds: BoundSettings::default(),
            ingest: IngestConfig::default(),
        }
    }
}

/// Command-line overrides, applied on top of the file/default config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub algo: Option<Algorithm>,
    pub grid: Option<Vec<f64>>,
    pub epochs: Option<usize>,
    pub threshold: Option<f64>,
}

impl ExperimentConfig {
    /// Applies flag overrides and normalizes the result: the master seed
    /// is copied into every nested config, and exponential weighting gets
    /// [`DEFAULT_LAMBDA`] if no temperature was chosen anywhere.
    pub fn resolve(mut self, flags: &Overrides) -> Self {
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(out) = &flags.out {
            self.out = out.clone();
        }
        if let Some(algo) = flags.algo {
            self.train.algorithm = algo;
        }
        if let Some(lambda) = flags.lambda {
            self.train.lambda = Some(lambda);
        }
        if let Some(grid) = &flags.grid {
            self.grid = grid.clone();
        }
        if let Some(epochs) = flags.epochs {
            self.train.epochs = epochs;
        }
        if let Some(threshold) = flags.threshold {
            self.metrics.threshold = threshold;
            self.ingest.rating_threshold = threshold;
        }
        if self.train.algorithm == Algorithm::ExpRsft && self.train.lambda.is_none() {
            self.train.lambda = Some(DEFAULT_LAMBDA);
        }
        self.train.seed = self.seed;
        self.rm.seed = self.seed;
        self.ppo.seed = self.seed;
        self.dpo.seed = self.seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_round_trips_to_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.n_samples, 1200);
        assert_eq!(cfg.grid, SWEEP_GRID.to_vec());
        assert_eq!(cfg.env, EnvSpec::default());
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.bounds, cfg.bounds);
    }

    #[test]
    fn flags_override_file_values() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 9, "train": {"algorithm": "bc", "epochs": 3}}"#)
                .unwrap();
        let flags = Overrides {
            seed: Some(42),
            epochs: Some(7),
            threshold: Some(0.6),
            ..Overrides::default()
        };
        let resolved = cfg.resolve(&flags);
        assert_eq!(resolved.seed, 42);
        assert_eq!(resolved.train.epochs, 7);
        assert_eq!(resolved.train.seed, 42);
        assert_eq!(resolved.rm.seed, 42);
        assert_eq!(resolved.metrics.threshold, 0.6);
        assert_eq!(resolved.ingest.rating_threshold, 0.6);
        assert_eq!(resolved.train.algorithm, Algorithm::Bc);
        assert_eq!(resolved.train.lambda, None);
    }

    #[test]
    fn exponential_weighting_gets_a_default_temperature() {
        let resolved = ExperimentConfig::default().resolve(&Overrides::default());
        assert_eq!(resolved.train.lambda, Some(DEFAULT_LAMBDA));

        let flags = Overrides {
            lambda: Some(0.25),
            ..Overrides::default()
        };
        let resolved = ExperimentConfig::default().resolve(&flags);
        assert_eq!(resolved.train.lambda, Some(0.25));
    }
}
