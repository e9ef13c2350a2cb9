//! Release acceptance suite: one test per gate, each asserting its stated
//! tolerance, so `cargo test -p exp-rsft-cli --test acceptance` prints one
//! pass/fail line per criterion.
//!
//! The gates, in order: exact improvement of clean tilting; the
//! high-probability improvement bound under Gaussian noise; the sure
//! divergence/value caps under bounded noise; the calibration round trip
//! of the smallest safe temperature; KL-projection fidelity and gradient
//! correctness of the trainer; the closed-form invariances and the
//! standardization reparametrization; the inverted-U of the shipped
//! temperature sweep; the reward-hacking phenomena on the shipped
//! benchmark; ranking-metric goldens and brute-force equivalence; and
//! byte-identical CLI reruns.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use exp_rsft::benchmark::{hack_benchmark, sweep_bc_config, sweep_benchmark};
use exp_rsft::bounds::{
    check_exact_improvement, check_high_prob_bound, check_min_lambda_roundtrip, check_sure_bounds,
    EnvSampler,
};
use exp_rsft::env::{
    empirical_mean_rewards, empirical_policy, make_low_rank_env, sample_dataset,
    sample_trajectories, LoggedInteraction, NoiseModel,
};
use exp_rsft::hackdemo::run_hack_demo;
use exp_rsft::mdp::return_stats;
use exp_rsft::metrics::{compute_metrics, TestCase};
use exp_rsft::policy::ParametricPolicy;
use exp_rsft::rm::{train_reward_model, NaivePredictors};
use exp_rsft::tilt::{exp_tilt, invariance_check, max_kl, TabularPolicy};
use exp_rsft::train::{
    build_examples, gradient_check, lambda_sweep, train, Algorithm, EncoderKind, EvalHooks,
    TrainConfig, WeightedExample,
};
use ndarray::Array2;

#[test]
fn clean_tilting_never_loses_value_on_random_tabular_environments() {
    let started = Instant::now();
    let sampler = EnvSampler::new(20, 50);
    let reports = check_exact_improvement(&sampler, &[0.1, 1.0, 10.0], 1000, 90_210).unwrap();
    assert_eq!(reports.len(), 3);
    for report in &reports {
        assert!(report.accepted, "rejected: {report:?}");
        for check in &report.checks {
            assert_eq!(
                check.violations, 0,
                "lambda {:?} check {} violated",
                report.lambda, check.name
            );
            assert!(check.n_events > 0);
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(30),
        "exact sweep took {elapsed:?}, budget is 30s"
    );
}

#[test]
fn noisy_tilt_value_drop_rate_stays_within_delta_with_a_temperature_free_gap() {
    let started = Instant::now();
    let env = make_low_rank_env(2, 1000, 2, 1.0, 1.0, 7_301)
        .unwrap()
        .with_noise(NoiseModel::Gaussian { sigma: 1.0 })
        .unwrap();
    let mut claimed_gaps = Vec::new();
    for lambda in [0.5, 1.0, 5.0] {
        let report = check_high_prob_bound(&env, lambda, 0.05, 10_000, 7_301).unwrap();
        assert!(
            report.accepted,
            "violation rate above delta at 99% confidence for lambda {lambda}: {report:?}"
        );
        let gap = report
            .checks
            .iter()
            .find(|c| c.name == "value_gap_lower")
            .expect("value gap check present");
        // One event per trial and per state.
        assert_eq!(gap.n_events, 10_000 * env.catalog.n_contexts as u64);
        claimed_gaps.push(gap.claimed);
    }
    assert!(
        claimed_gaps.windows(2).all(|w| w[0] == w[1]),
        "claimed gap should not depend on the temperature: {claimed_gaps:?}"
    );
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(120),
        "high-probability suite took {elapsed:?}, budget is 2min"
    );
}

#[test]
fn bounded_noise_divergence_and_value_caps_never_break() {
    let started = Instant::now();
    for half_width in [0.05, 0.1, 0.3] {
        let env = make_low_rank_env(4, 12, 2, 1.0, 1.0, 5_115)
            .unwrap()
            .with_noise(NoiseModel::BoundedUniform { half_width })
            .unwrap();
        for lambda in [0.2, 1.0, 5.0] {
            let report = check_sure_bounds(&env, lambda, 1000, 5_115).unwrap();
            assert!(report.accepted, "rejected: {report:?}");
            for check in &report.checks {
                assert_eq!(
                    check.violations, 0,
                    "epsilon {half_width} lambda {lambda} check {} violated",
                    check.name
                );
            }
            let linearized = report
                .checks
                .iter()
                .any(|c| c.name == "value_gap_linearized_lower");
            assert_eq!(
                linearized,
                lambda >= 2.0 * report.epsilon,
                "linearized bound must be checked exactly when the temperature \
                 dominates twice the noise bound"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "sure-bound suite took {elapsed:?}, budget is 1min"
    );
}

#[test]
fn smallest_safe_temperature_recovers_the_tolerated_drop() {
    let report = check_min_lambda_roundtrip(100, 4_047).unwrap();
    assert!(report.accepted);
    let check = &report.checks[0];
    assert_eq!(check.n_events, 100);
    assert_eq!(check.violations, 0);
    assert!(
        check.realized.max <= 1e-10,
        "worst round-trip error {} above 1e-10",
        check.realized.max
    );
}

#[test]
fn tabular_fit_reaches_the_exact_tilt_and_gradients_match_finite_differences() {
    // Full-capacity fit against the closed-form target.
    let env = make_low_rank_env(4, 6, 2, 1.0, 1.0, 19).unwrap();
    let data = sample_dataset(&env, 4000, 23).unwrap();
    let lambda = 0.5;
    let cfg = TrainConfig {
        lambda: Some(lambda),
        epochs: 1500,
        batch_size: 4000,
        learning_rate: 0.5,
        ..TrainConfig::new(Algorithm::ExpRsft)
    };
    let (policy, _) = train(&data, &cfg, EvalHooks::default()).unwrap();
    let empirical = empirical_policy(&data).unwrap();
    let rewards = empirical_mean_rewards(&data).mean;
    let target = exp_tilt(&empirical, &rewards, lambda).unwrap();
    let kl = max_kl(&target.policy, &policy.to_tabular().unwrap()).unwrap();
    assert!(kl <= 1e-3, "KL to the exact empirical tilt: {kl}");

    // Analytic batch gradients against central finite differences on 50
    // seeded instances spanning sizes, noise, weighting modes and
    // encoders.
    for i in 0..50usize {
        let n_contexts = 2 + i % 6;
        let n_actions = 2 + (i * 7) % 9;
        let mut env = make_low_rank_env(n_contexts, n_actions, 2, 1.0, 1.2, 900 + i as u64)
            .unwrap();
        if i % 2 == 1 {
            env = env.with_noise(NoiseModel::Gaussian { sigma: 0.3 }).unwrap();
        }
        let mut data = sample_dataset(&env, 40 + (i * 13) % 60, 100 + i as u64).unwrap();
        data.histories = Some(
            (0..n_contexts)
                .map(|s| {
                    if s == 0 {
                        Vec::new()
                    } else {
                        vec![s % n_actions, (s + 1) % n_actions]
                    }
                })
                .collect(),
        );
        let mut cfg = match i % 3 {
            0 => TrainConfig::new(Algorithm::Bc),
            1 => TrainConfig::new(Algorithm::Rsft),
            _ => TrainConfig::new(Algorithm::ExpRsft).with_lambda(0.7),
        };
        cfg.encoder = match (i / 3) % 3 {
            0 => EncoderKind::OneHot,
            1 => EncoderKind::Learned { dim: 2 },
            _ => EncoderKind::MeanHistory { dim: 2 },
        };
        let examples = build_examples(&data, &cfg).unwrap();
        let batch: Vec<&WeightedExample> = examples.iter().take(16).collect();
        let policy = match cfg.encoder {
            EncoderKind::OneHot => ParametricPolicy::one_hot(n_contexts, n_actions, 200 + i as u64),
            EncoderKind::Learned { dim } => {
                ParametricPolicy::learned(n_contexts, n_actions, dim, 200 + i as u64)
            }
            EncoderKind::MeanHistory { dim } => ParametricPolicy::mean_history(
                n_actions,
                dim,
                data.histories.clone().unwrap(),
                200 + i as u64,
            )
            .unwrap(),
        };
        let err = gradient_check(&policy, &batch, 1e-4).unwrap();
        assert!(err <= 1e-4, "instance {i}: relative gradient error {err}");
    }
}

#[test]
fn closed_form_tilt_invariances_and_standardization_reparametrization_hold() {
    // Per-context reward shifts and joint reward/temperature rescaling
    // leave the tilted policy unchanged on 100 random instances.
    for i in 0..100usize {
        let n_contexts = 1 + i % 7;
        let n_actions = 2 + (i * 5) % 14;
        let env = make_low_rank_env(
            n_contexts,
            n_actions,
            2.min(n_contexts),
            1.0 + (i % 3) as f64,
            1.0 + (i % 4) as f64 * 0.4,
            300 + i as u64,
        )
        .unwrap();
        let lambda = [0.1, 1.0, 10.0][i % 3];
        let shift: Vec<f64> = (0..n_contexts)
            .map(|s| ((i + s) as f64 * 0.7).sin() * 3.0)
            .collect();
        let scale = 0.2 + (i % 9) as f64 * 0.5;
        let report =
            invariance_check(&env.logging_policy, &env.true_reward, lambda, &shift, scale)
                .unwrap();
        assert!(
            report.shift_deviation <= 1e-10,
            "instance {i}: shift moved the tilt by {}",
            report.shift_deviation
        );
        assert!(
            report.scale_deviation <= 1e-10,
            "instance {i}: rescaling moved the tilt by {}",
            report.scale_deviation
        );
    }

    // Standardizing returns is the same run as raw returns at temperature
    // lambda times the return spread (the mean shift only rescales every
    // weight, which the matched learning rate absorbs).
    let env = make_low_rank_env(5, 8, 2, 1.0, 1.0, 3)
        .unwrap()
        .with_noise(NoiseModel::Gaussian { sigma: 0.1 })
        .unwrap();
    let data = sample_trajectories(&env, 120, 3, 21).unwrap();
    let returns: Vec<f64> = data
        .trajectories
        .as_ref()
        .unwrap()
        .iter()
        .map(|t| t.total_return())
        .collect();
    let stats = return_stats(&returns).unwrap();
    assert!(stats.std_dev > 0.0);

    let lambda = 0.8;
    let mut cfg = TrainConfig {
        epochs: 8,
        batch_size: 32,
        trajectory_mode: true,
        standardize_rewards: Some(true),
        ..TrainConfig::new(Algorithm::ExpRsft).with_lambda(lambda)
    };
    let (standardized, _) = train(&data, &cfg, EvalHooks::default()).unwrap();

    let raw_lambda = lambda * stats.std_dev;
    cfg.standardize_rewards = Some(false);
    cfg.lambda = Some(raw_lambda);
    cfg.learning_rate *= (-stats.mean / raw_lambda).exp();
    let (raw, _) = train(&data, &cfg, EvalHooks::default()).unwrap();

    let worst = standardized
        .item_embeddings
        .iter()
        .zip(raw.item_embeddings.iter())
        .chain(standardized.item_bias.iter().zip(raw.item_bias.iter()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        worst <= 1e-8,
        "standardized and reparametrized runs diverged by {worst}"
    );
}

#[test]
fn shipped_temperature_sweep_peaks_strictly_inside_the_grid() {
    let bench = sweep_benchmark().unwrap();
    let entries =
        lambda_sweep(&bench.dataset, &bench.env, &bench.grid, &bench.base, &bench.test_cases)
            .unwrap();
    assert_eq!(entries.len(), bench.grid.len());

    let interior = |series: &[f64], name: &str| {
        let (argmax, max) = series
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                if v > best.1 {
                    (k, v)
                } else {
                    best
                }
            });
        assert!(
            argmax > 0 && argmax + 1 < series.len(),
            "{name} peaks at the grid edge: {series:?}"
        );
        assert!(max > series[0] && max > series[series.len() - 1]);
    };
    let collect = |f: &dyn Fn(&exp_rsft::train::SweepRow) -> f64| -> Vec<f64> {
        entries.iter().map(|e| f(&e.row)).collect()
    };
    interior(&collect(&|r| r.best_value), "best-epoch oracle value");
    interior(&collect(&|r| r.final_value), "final-epoch oracle value");
    interior(&collect(&|r| r.best_ndcg10), "best-epoch ndcg@10");
    interior(&collect(&|r| r.final_ndcg10), "final-epoch ndcg@10");

    // The most conservative temperature reduces to cloning.
    let hooks = EvalHooks {
        env: Some(&bench.env),
        reference: None,
        test_cases: Some(&bench.test_cases),
    };
    let (_, bc_trace) = train(&bench.dataset, &sweep_bc_config(), hooks).unwrap();
    let bc_final = bc_trace.records.last().unwrap().true_value.unwrap();
    let largest = &entries.last().unwrap().row;
    assert!(
        (largest.final_value - bc_final).abs() <= 1e-2,
        "largest temperature ({}) drifted from cloning: {} vs {bc_final}",
        largest.lambda,
        largest.final_value
    );
}

#[test]
fn model_optimizers_outscore_and_underdeliver_on_the_shipped_benchmark() {
    let bench = hack_benchmark().unwrap();
    let result = run_hack_demo(&bench).unwrap();
    let by_name = |name: &str| result.summary(name).unwrap();
    let (bc, rsft, exp, ppo, dpo) = (
        by_name("bc"),
        by_name("rsft"),
        by_name("exp_rsft"),
        by_name("ppo"),
        by_name("dpo"),
    );

    for optimizer in [ppo, dpo] {
        assert!(
            optimizer.avg_rm_score > exp.avg_rm_score,
            "{} should beat the weighted fit on the model's own score",
            optimizer.name
        );
        assert!(
            optimizer.oracle_value < bc.oracle_value,
            "{} should fall below cloning in true value",
            optimizer.name
        );
    }
    assert!(bc.oracle_value < rsft.oracle_value);
    assert!(rsft.oracle_value < exp.oracle_value);

    // The emitted model-vs-baselines table must match brute-force error
    // computations on the same held-out split.
    let artifacts = train_reward_model(&bench.dataset, &bench.rm).unwrap();
    let naive = NaivePredictors::fit(bench.dataset.catalog, &artifacts.train).unwrap();
    let brute = |predict: &dyn Fn(&LoggedInteraction) -> f64| -> (f64, f64) {
        let n = artifacts.validation.len() as f64;
        let mut se = 0.0;
        let mut ae = 0.0;
        for x in &artifacts.validation {
            let err = predict(x) - x.observed_reward;
            se += err * err;
            ae += err.abs();
        }
        (se / n, ae / n)
    };
    let expected: [(&str, (f64, f64)); 4] = [
        ("reward_model", brute(&|x| artifacts.model.predict(x.context, x.action))),
        ("user_mean", brute(&|x| naive.user(x.context))),
        ("item_mean", brute(&|x| naive.item(x.action))),
        ("global_mean", brute(&|_| naive.global())),
    ];
    assert_eq!(result.predictor_rows.len(), expected.len());
    for (name, (mse, mae)) in expected {
        let row = result
            .predictor_rows
            .iter()
            .find(|r| r.name == name)
            .expect("predictor row present");
        assert!(
            (row.mse - mse).abs() <= 1e-12 && (row.mae - mae).abs() <= 1e-12,
            "{name}: reported ({}, {}) vs brute force ({mse}, {mae})",
            row.mse,
            row.mae
        );
    }
}

#[test]
fn ranking_metrics_match_goldens_and_brute_force() {
    // Goldens: targets at ranks 1 and 3.
    let policy = TabularPolicy::from_rows_normalized(
        Array2::from_shape_vec((2, 3), vec![0.6, 0.25, 0.15, 0.6, 0.25, 0.15]).unwrap(),
    )
    .unwrap();
    let cases = [
        TestCase { context: 0, target: 0, target_rating: 1.0 },
        TestCase { context: 1, target: 2, target_rating: 1.0 },
    ];
    let golden = compute_metrics(&policy, &cases).unwrap();
    assert!((golden.ndcg10 - 0.75).abs() <= 1e-15, "ndcg@10 {}", golden.ndcg10);
    assert!((golden.hr10 - 1.0).abs() <= 1e-15, "hr@10 {}", golden.hr10);
    assert!((golden.mrr - 2.0 / 3.0).abs() <= 1e-15, "mrr {}", golden.mrr);

    // Brute-force equivalence on every catalog size up to 12, with heavy
    // score ties to pin the smaller-id-first rule.
    for n_actions in 2..=12usize {
        let n_contexts = 3;
        let weights = Array2::from_shape_fn((n_contexts, n_actions), |(s, a)| {
            1.0 + ((s * 3 + a * 5) % 4) as f64
        });
        let policy = TabularPolicy::from_rows_normalized(weights).unwrap();
        let cases: Vec<TestCase> = (0..n_contexts)
            .flat_map(|s| {
                (0..n_actions).map(move |t| TestCase {
                    context: s,
                    target: t,
                    target_rating: 1.0,
                })
            })
            .collect();
        let report = compute_metrics(&policy, &cases).unwrap();

        let n = cases.len() as f64;
        let (mut hr10, mut hr50, mut ndcg10, mut ndcg50, mut mrr) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for case in &cases {
            let scores = policy.row(case.context);
            let better = scores
                .iter()
                .enumerate()
                .filter(|&(a, &v)| {
                    v > scores[case.target] || (v == scores[case.target] && a < case.target)
                })
                .count();
            let rank = better + 1;
            let gain = 1.0 / ((rank + 1) as f64).log2();
            if rank <= 10 {
                hr10 += 1.0;
                ndcg10 += gain;
            }
            if rank <= 50 {
                hr50 += 1.0;
                ndcg50 += gain;
            }
            mrr += 1.0 / rank as f64;
        }
        assert!((report.hr10 - hr10 / n).abs() <= 1e-12);
        assert!((report.hr50 - hr50 / n).abs() <= 1e-12);
        assert!((report.ndcg10 - ndcg10 / n).abs() <= 1e-12);
        assert!((report.ndcg50 - ndcg50 / n).abs() <= 1e-12);
        assert!((report.mrr - mrr / n).abs() <= 1e-12);
        // Discounted gains never exceed plain hits.
        assert!(report.ndcg10 <= report.hr10 + 1e-12);
        assert!(report.ndcg50 <= report.hr50 + 1e-12);
    }
}

#[test]
fn cli_reruns_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let path = |name: &str| root.path().join(name);
    let write = |name: &str, text: &str| std::fs::write(path(name), text).unwrap();

    write(
        "small.json",
        r#"{"n_samples": 300, "env": {"n_contexts": 6, "n_actions": 12},
            "metrics": {"n_test_cases": 40}}"#,
    );
    let data_dir = path("data");
    run_cli(&["gen-data", "--config", &str_of(path("small.json")), "--out", &str_of(data_dir.clone()), "--seed", "5"]);
    let dataset = data_dir.join("dataset");
    write(
        "train.json",
        &format!(r#"{{"dataset": {:?}, "train": {{"epochs": 8}}}}"#, str_of(dataset.clone())),
    );
    write(
        "rl.json",
        &format!(
            r#"{{"dataset": {:?}, "ppo": {{"steps": 5}}, "dpo": {{"steps": 5}}}}"#,
            str_of(dataset.clone())
        ),
    );
    write(
        "bounds.json",
        r#"{"bounds": {"n_instances": 25, "hp_trials": 150, "sure_trials": 40, "n_draws": 20}}"#,
    );
    write(
        "ratings.dat",
        "1::10::5::100\n1::11::4::200\n1::12::5::300\n2::10::3::100\n2::12::5::250\n\
         2::13::4::300\n3::11::5::50\n3::13::2::80\n3::10::4::90\n",
    );

    let train_cfg = str_of(path("train.json"));
    let rl_cfg = str_of(path("rl.json"));
    let bounds_cfg = str_of(path("bounds.json"));
    let ratings = str_of(path("ratings.dat"));
    let sft_out = str_of(path("run_sft"));
    let checkpoint = str_of(path("run_sft").join("checkpoint"));
    let scenarios: Vec<Vec<String>> = vec![
        args(&["gen-env", "--out", &str_of(path("env")), "--seed", "3"]),
        args(&["gen-data", "--config", &str_of(path("small.json")), "--out", &str_of(data_dir.clone()), "--seed", "5"]),
        args(&["train", "--config", &train_cfg, "--algo", "exp-rsft", "--lambda", "0.5", "--seed", "7", "--out", &sft_out]),
        args(&["train", "--config", &rl_cfg, "--algo", "ppo", "--seed", "9", "--out", &str_of(path("run_ppo"))]),
        args(&["train", "--config", &rl_cfg, "--algo", "dpo", "--seed", "9", "--out", &str_of(path("run_dpo"))]),
        args(&["eval", &checkpoint, "--config", &train_cfg, "--seed", "7", "--out", &str_of(path("eval"))]),
        args(&["verify-bounds", "prop1", "--config", &bounds_cfg, "--seed", "11", "--out", &str_of(path("vb_exact"))]),
        args(&["verify-bounds", "min-lambda", "--config", &bounds_cfg, "--seed", "11", "--out", &str_of(path("vb_cal"))]),
        args(&["sweep-lambda", "--grid", "0.1,5", "--epochs", "4", "--out", &str_of(path("sweep"))]),
        args(&["rm-baselines", "--config", &rl_cfg, "--seed", "4", "--out", &str_of(path("rm"))]),
        args(&["ingest-movielens", &ratings, "--threshold", "4", "--out", &str_of(path("ml"))]),
        args(&["hack-demo", "--out", &str_of(path("hack"))]),
    ];

    for scenario in &scenarios {
        let argv: Vec<&str> = scenario.iter().map(String::as_str).collect();
        run_cli(&argv);
        let out_dir = out_of(&argv);
        let first = snapshot(&out_dir);
        assert!(!first.is_empty(), "{argv:?} wrote nothing");
        run_cli(&argv);
        let second = snapshot(&out_dir);
        assert_eq!(
            first.keys().collect::<Vec<_>>(),
            second.keys().collect::<Vec<_>>(),
            "{argv:?} produced a different file set on rerun"
        );
        for (file, bytes) in &first {
            assert!(
                second[file] == *bytes,
                "{argv:?} rerun changed {file}"
            );
        }
    }
}

fn args(argv: &[&str]) -> Vec<String> {
    argv.iter().map(|s| s.to_string()).collect()
}

fn str_of(path: std::path::PathBuf) -> String {
    path.to_str().expect("utf-8 path").to_string()
}

fn out_of(argv: &[&str]) -> std::path::PathBuf {
    let k = argv.iter().position(|a| *a == "--out").expect("--out set");
    std::path::PathBuf::from(argv[k + 1])
}

fn run_cli(argv: &[&str]) {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_exp-rsft"))
        .args(argv)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    assert!(status.success(), "exp-rsft {argv:?} failed");
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, into);
            } else {
                let name = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                into.insert(name, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}
