//! Subcommand implementations. Each one resolves its inputs from the
//! experiment configuration, runs the library, and writes a deterministic
//! set of artifacts plus a `manifest.json` (the resolved configuration)
//! into the output directory.
//!
//! Data sources resolve the same way everywhere: a `dataset` directory in
//! the configuration wins, falling back to a simulator loaded from
//! `env_file`, falling back to a simulator sampled from the `env` spec.
//! Dataset directories produced by `gen-data` are self-contained: they
//! carry the simulator (`env.json`) and held-out cases
//! (`test_cases.json`) next to the logged interactions, so later stages
//! can evaluate oracle values without re-deriving anything.

use std::path::Path;

use exp_rsft::benchmark::{hack_benchmark, sweep_benchmark, sweep_bc_config};
use exp_rsft::bounds::{
    check_exact_improvement, check_high_prob_bound, check_min_lambda_roundtrip, check_sure_bounds,
    BoundReport, EnvSampler,
};
use exp_rsft::dataio::{
    format_float, hack_csv, load_dataset, load_policy, metrics_csv, run_manifest, save_dataset,
    save_policy, save_reward_model, sweep_csv, train_trace_csv, write_text, DatasetManifest,
    MetricsRow,
};
use exp_rsft::dpo::run_dpo;
use exp_rsft::env::{
    make_low_rank_env, sample_dataset, sample_test_cases, sample_trajectories, NoiseModel,
    OfflineDataset, SyntheticEnvironment,
};
use exp_rsft::hackdemo::{run_hack_demo, AlgoSummary};
use exp_rsft::metrics::{compute_metrics, oracle_value, TestCase};
use exp_rsft::movielens::ingest_movielens;
use exp_rsft::policy::ParametricPolicy;
use exp_rsft::ppo::run_ppo;
use exp_rsft::rm::{
    avg_reward_score, evaluate_predictors, expected_rm_score, train_reward_model, NaivePredictors,
    PredictorRow, RewardModel,
};
use exp_rsft::train::{lambda_sweep, train as fit_policy, Algorithm, EncoderKind, EvalHooks};
use exp_rsft::{Error, Result};

use crate::config::{ExperimentConfig, Overrides};

const RUN_MANIFEST_FILE: &str = "manifest.json";
const ENV_FILE: &str = "env.json";
const TEST_CASES_FILE: &str = "test_cases.json";
/// Monte-Carlo generations when reporting a policy's average model score.
const MC_SCORE_GENERATIONS: usize = 2000;

/// Which optimizer the `train` subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainKind {
    /// Weighted maximum likelihood on the logged data (bc, rsft, exp-rsft).
    Supervised,
    Ppo,
    Dpo,
}

/// Guarantee families `verify-bounds` can check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BoundMode {
    /// Exact improvement of clean tilting on random tabular instances.
    Prop1,
    /// High-probability improvement under Gaussian reward error.
    Thm1,
    /// Sure improvement and divergence caps under bounded reward error.
    Thm2,
    /// Calibration round trip of the smallest safe temperature.
    MinLambda,
}

impl BoundMode {
    fn name(self) -> &'static str {
        match self {
            BoundMode::Prop1 => "prop1",
            BoundMode::Thm1 => "thm1",
            BoundMode::Thm2 => "thm2",
            BoundMode::MinLambda => "min-lambda",
        }
    }
}

/// The resolved data source: logged interactions, plus the simulator and
/// held-out cases when they are available for evaluation.
struct DataSource {
    dataset: OfflineDataset,
    env: Option<SyntheticEnvironment>,
    test_cases: Option<Vec<TestCase>>,
}

pub fn gen_env(cfg: &ExperimentConfig) -> Result<()> {
    let env = build_env(cfg)?;
    write_text(&cfg.out.join(ENV_FILE), &pretty(&env)?)?;
    write_manifest(cfg, "gen-env", &[])?;
    println!(
        "wrote {} ({} contexts, {} actions)",
        cfg.out.join(ENV_FILE).display(),
        env.catalog.n_contexts,
        env.catalog.n_actions
    );
    Ok(())
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let env = build_env(cfg)?;
    let (dataset, horizon) = draw_dataset(&env, cfg)?;
    let manifest = DatasetManifest {
        n_contexts: env.catalog.n_contexts,
        n_actions: env.catalog.n_actions,
        n_records: dataset.interactions.len(),
        n_trajectories: dataset.trajectories.as_ref().map(Vec::len),
        horizon,
        seed: Some(cfg.seed),
        noise: Some(env.noise.clone()),
        source: Some("synthetic".into()),
    };
    let data_dir = cfg.out.join("dataset");
    save_dataset(&data_dir, &dataset, &manifest)?;
    write_text(&data_dir.join(ENV_FILE), &pretty(&env)?)?;
    let cases = sample_cases(&env, cfg)?;
    write_text(&data_dir.join(TEST_CASES_FILE), &pretty(&cases)?)?;
    write_manifest(cfg, "gen-data", &[])?;
    println!(
        "wrote {} interactions and {} test cases to {}",
        dataset.interactions.len(),
        cases.len(),
        data_dir.display()
    );
    Ok(())
}

pub fn ingest(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let result = ingest_movielens(path, &cfg.ingest)?;
    let stats = result.stats;
    let manifest = DatasetManifest {
        n_contexts: result.dataset.catalog.n_contexts,
        n_actions: result.dataset.catalog.n_actions,
        n_records: result.dataset.interactions.len(),
        n_trajectories: None,
        horizon: None,
        seed: None,
        noise: None,
        source: Some("movielens".into()),
    };
    let data_dir = cfg.out.join("dataset");
    save_dataset(&data_dir, &result.dataset, &manifest)?;
    write_text(&data_dir.join(TEST_CASES_FILE), &pretty(&result.test_cases)?)?;
    write_text(&cfg.out.join("stats.json"), &pretty(&stats)?)?;
    write_manifest(
        cfg,
        "ingest-movielens",
        &[("path", path.display().to_string().into())],
    )?;
    println!(
        "kept {} users, {} items, {} interactions, {} test cases",
        stats.users_kept, stats.items, stats.train_interactions, stats.test_cases
    );
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, kind: TrainKind) -> Result<()> {
    let source = load_source(cfg)?;
    match kind {
        TrainKind::Supervised => train_supervised(cfg, &source),
        TrainKind::Ppo | TrainKind::Dpo => train_reward_seeking(cfg, &source, kind),
    }
}

fn train_supervised(cfg: &ExperimentConfig, source: &DataSource) -> Result<()> {
    let hooks = EvalHooks {
        env: source.env.as_ref(),
        reference: None,
        test_cases: source.test_cases.as_deref(),
    };
    let (policy, trace) = fit_policy(&source.dataset, &cfg.train, hooks)?;
    write_text(&cfg.out.join("trace.csv"), &train_trace_csv(&trace))?;
    let algo = algorithm_name(cfg.train.algorithm);
    save_policy(
        &cfg.out.join("checkpoint"),
        &policy,
        serde_json::json!({ "algo": algo, "train": cfg.train }),
    )?;
    write_final_metrics(cfg, source, &policy, algo, cfg.train.epochs, None)?;
    write_manifest(cfg, "train", &[("algo", algo.into())])?;
    if let Some(last) = trace.records.last() {
        println!("{algo}: {} epochs, final loss {}", cfg.train.epochs, format_float(last.loss));
    }
    Ok(())
}

fn train_reward_seeking(cfg: &ExperimentConfig, source: &DataSource, kind: TrainKind) -> Result<()> {
    let artifacts = train_reward_model(&source.dataset, &cfg.rm)?;
    let model = &artifacts.model;
    let dist = context_distribution(source);
    let start = fresh_policy(cfg, &source.dataset)?;
    let mut rows: Vec<StepRow> = Vec::new();
    let (algo, steps, trained) = match kind {
        TrainKind::Ppo => {
            let trained = run_ppo(start, model, &dist, &cfg.ppo, |step, policy, _| {
                record_step(&mut rows, step, policy, model, &dist, source)
            })?;
            ("ppo", cfg.ppo.steps, trained)
        }
        TrainKind::Dpo => {
            let trained = run_dpo(start, model, &dist, &cfg.dpo, |step, policy, _| {
                record_step(&mut rows, step, policy, model, &dist, source)
            })?;
            ("dpo", cfg.dpo.steps, trained)
        }
        TrainKind::Supervised => unreachable!("supervised runs go through train_supervised"),
    };
    write_text(&cfg.out.join("steps.csv"), &steps_csv(&rows))?;
    save_policy(
        &cfg.out.join("checkpoint"),
        &trained,
        serde_json::json!({ "algo": algo }),
    )?;
    save_reward_model(
        &cfg.out.join("reward_model"),
        model,
        serde_json::json!({ "config": cfg.rm, "fit": artifacts.report }),
    )?;
    let avg = avg_reward_score(&trained, model, &dist, MC_SCORE_GENERATIONS, cfg.seed)?;
    write_final_metrics(cfg, source, &trained, algo, steps, Some(avg))?;
    write_manifest(cfg, "train", &[("algo", algo.into())])?;
    println!(
        "{algo}: {} steps, final model score {}",
        steps,
        format_float(expected_rm_score(&trained, model, &dist))
    );
    Ok(())
}

/// Runs the shipped noisy-log benchmark across the temperature grid, plus
/// a cloning reference. The benchmark's environment, data and schedule are
/// pinned; only `--grid`, `--epochs` and `--seed` poke at it.
pub fn sweep(cfg: &ExperimentConfig, flags: &Overrides) -> Result<()> {
    let bench = sweep_benchmark()?;
    let mut base = bench.base.clone();
    if let Some(epochs) = flags.epochs {
        base.epochs = epochs;
    }
    if let Some(seed) = flags.seed {
        base.seed = seed;
    }
    let entries = lambda_sweep(&bench.dataset, &bench.env, &cfg.grid, &base, &bench.test_cases)?;
    let rows: Vec<_> = entries.iter().map(|e| e.row.clone()).collect();
    write_text(&cfg.out.join("sweep.csv"), &sweep_csv(&rows))?;
    for entry in &entries {
        let name = format!("traces/lambda_{}.csv", format_float(entry.row.lambda));
        write_text(&cfg.out.join(name), &train_trace_csv(&entry.trace))?;
    }
    let mut bc = sweep_bc_config();
    bc.epochs = base.epochs;
    bc.seed = base.seed;
    let hooks = EvalHooks {
        env: Some(&bench.env),
        reference: None,
        test_cases: Some(&bench.test_cases),
    };
    let (_, bc_trace) = fit_policy(&bench.dataset, &bc, hooks)?;
    write_text(&cfg.out.join("bc_trace.csv"), &train_trace_csv(&bc_trace))?;
    write_manifest(cfg, "sweep-lambda", &[])?;
    for row in &rows {
        println!(
            "lambda={}: best value {} at epoch {}, final value {}, final ndcg@10 {}",
            format_float(row.lambda),
            format_float(row.best_value),
            row.best_value_epoch,
            format_float(row.final_value),
            format_float(row.final_ndcg10)
        );
    }
    Ok(())
}

pub fn verify(cfg: &ExperimentConfig, mode: BoundMode, flags: &Overrides) -> Result<()> {
    let b = &cfg.bounds;
    let override_grid = |default: &[f64]| -> Vec<f64> {
        flags.grid.clone().unwrap_or_else(|| default.to_vec())
    };
    let reports: Vec<BoundReport> = match mode {
        BoundMode::Prop1 => {
            let sampler = EnvSampler::new(b.max_contexts, b.max_actions);
            check_exact_improvement(
                &sampler,
                &override_grid(&b.exact_lambdas),
                b.n_instances,
                cfg.seed,
            )?
        }
        BoundMode::Thm1 => {
            let env = make_low_rank_env(b.hp_contexts, b.hp_actions, 2, 1.0, 1.0, cfg.seed)?
                .with_noise(NoiseModel::Gaussian { sigma: b.sigma })?;
            let mut reports = Vec::new();
            for &lambda in &override_grid(&b.hp_lambdas) {
                reports.push(check_high_prob_bound(&env, lambda, b.delta, b.hp_trials, cfg.seed)?);
            }
            reports
        }
        BoundMode::Thm2 => {
            let mut reports = Vec::new();
            for &half_width in &b.noise_bounds {
                let env =
                    make_low_rank_env(b.sure_contexts, b.sure_actions, 2, 1.0, 1.0, cfg.seed)?
                        .with_noise(NoiseModel::BoundedUniform { half_width })?;
                for &lambda in &override_grid(&b.sure_lambdas) {
                    reports.push(check_sure_bounds(&env, lambda, b.sure_trials, cfg.seed)?);
                }
            }
            reports
        }
        BoundMode::MinLambda => vec![check_min_lambda_roundtrip(b.n_draws, cfg.seed)?],
    };
    write_text(&cfg.out.join("report.json"), &pretty(&reports)?)?;
    write_manifest(cfg, "verify-bounds", &[("mode", mode.name().into())])?;
    for report in &reports {
        println!("{}", describe(report));
    }
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let (policy, meta) = load_policy(checkpoint)?;
    let (env, cases) = eval_cases(cfg)?;
    let mut report = compute_metrics(&policy, &cases)?;
    if let Some(env) = &env {
        report.oracle_value = Some(oracle_value(env, &policy)?);
    }
    let algo = meta
        .get("algo")
        .and_then(|v| v.as_str())
        .unwrap_or("policy")
        .to_string();
    println!(
        "{algo}: ndcg@10 {} hr@10 {} mrr {} over {} cases",
        format_float(report.ndcg10),
        format_float(report.hr10),
        format_float(report.mrr),
        report.n_cases
    );
    let rows = [MetricsRow { algo, epoch: 0, report }];
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(&rows))?;
    write_manifest(
        cfg,
        "eval",
        &[("checkpoint", checkpoint.display().to_string().into())],
    )?;
    Ok(())
}

pub fn rm_baselines(cfg: &ExperimentConfig) -> Result<()> {
    let source = load_source(cfg)?;
    let artifacts = train_reward_model(&source.dataset, &cfg.rm)?;
    let naive = NaivePredictors::fit(source.dataset.catalog, &artifacts.train)?;
    let rows = evaluate_predictors(&artifacts.validation, &artifacts.model, &naive)?;
    write_text(&cfg.out.join("rm_baselines.csv"), &predictor_csv(&rows))?;
    write_text(&cfg.out.join("fit_report.json"), &pretty(&artifacts.report)?)?;
    save_reward_model(
        &cfg.out.join("reward_model"),
        &artifacts.model,
        serde_json::json!({ "config": cfg.rm }),
    )?;
    write_manifest(cfg, "rm-baselines", &[])?;
    for row in &rows {
        println!(
            "{}: mse {} mae {}",
            row.name,
            format_float(row.mse),
            format_float(row.mae)
        );
    }
    Ok(())
}

pub fn hack_demo(cfg: &ExperimentConfig) -> Result<()> {
    let bench = hack_benchmark()?;
    let result = run_hack_demo(&bench)?;
    let out = &cfg.out;
    write_text(&out.join("summary.csv"), &summary_csv(&result.summaries))?;
    for (name, trace) in &result.sft_traces {
        write_text(&out.join(format!("{name}_trace.csv")), &train_trace_csv(trace))?;
    }
    write_text(&out.join("ppo_steps.csv"), &hack_csv(&result.ppo_steps))?;
    write_text(&out.join("dpo_steps.csv"), &hack_csv(&result.dpo_steps))?;
    write_text(&out.join("rm_report.json"), &pretty(&result.rm_report)?)?;
    write_text(&out.join("rm_baselines.csv"), &predictor_csv(&result.predictor_rows))?;
    for (name, policy) in &result.policies {
        save_policy(
            &out.join("policies").join(name),
            policy,
            serde_json::json!({ "algo": name }),
        )?;
    }
    write_manifest(cfg, "hack-demo", &[])?;
    for s in &result.summaries {
        println!(
            "{}: oracle value {}, avg model score {}",
            s.name,
            format_float(s.oracle_value),
            format_float(s.avg_rm_score)
        );
    }
    Ok(())
}

/// Loads the simulator from `env_file`, or samples one from the spec.
fn build_env(cfg: &ExperimentConfig) -> Result<SyntheticEnvironment> {
    if let Some(path) = &cfg.env_file {
        let text = std::fs::read_to_string(path).map_err(|err| {
            Error::Parameter(format!(
                "cannot read environment file {}: {err}",
                path.display()
            ))
        })?;
        return serde_json::from_str(&text).map_err(|err| {
            Error::Parameter(format!(
                "cannot parse environment file {}: {err}",
                path.display()
            ))
        });
    }
    let spec = &cfg.env;
    make_low_rank_env(
        spec.n_contexts,
        spec.n_actions,
        spec.rank,
        spec.r_max,
        spec.popularity_skew,
        cfg.seed,
    )?
    .with_noise(spec.noise.clone())
}

/// Draws interactions, or trajectories when a horizon above 1 is set.
/// Returns the horizon actually used for episodes.
fn draw_dataset(
    env: &SyntheticEnvironment,
    cfg: &ExperimentConfig,
) -> Result<(OfflineDataset, Option<usize>)> {
    match cfg.horizon {
        Some(h) if h > 1 => Ok((sample_trajectories(env, cfg.n_samples, h, cfg.seed)?, Some(h))),
        _ => Ok((sample_dataset(env, cfg.n_samples, cfg.seed)?, None)),
    }
}

fn sample_cases(env: &SyntheticEnvironment, cfg: &ExperimentConfig) -> Result<Vec<TestCase>> {
    sample_test_cases(env, cfg.metrics.n_test_cases, cfg.metrics.threshold, cfg.seed)
}

fn load_source(cfg: &ExperimentConfig) -> Result<DataSource> {
    if let Some(dir) = &cfg.dataset {
        let (dataset, _) = load_dataset(dir)?;
        let env = maybe_env(dir)?;
        let mut test_cases = maybe_cases(dir)?;
        if test_cases.is_none() {
            if let Some(env) = &env {
                test_cases = Some(sample_cases(env, cfg)?);
            }
        }
        return Ok(DataSource { dataset, env, test_cases });
    }
    let env = build_env(cfg)?;
    let (dataset, _) = draw_dataset(&env, cfg)?;
    let test_cases = sample_cases(&env, cfg)?;
    Ok(DataSource {
        dataset,
        env: Some(env),
        test_cases: Some(test_cases),
    })
}

/// Evaluation inputs without loading interactions: the simulator (when
/// known) and held-out cases.
fn eval_cases(cfg: &ExperimentConfig) -> Result<(Option<SyntheticEnvironment>, Vec<TestCase>)> {
    if let Some(dir) = &cfg.dataset {
        let env = maybe_env(dir)?;
        if let Some(cases) = maybe_cases(dir)? {
            return Ok((env, cases));
        }
        if let Some(env) = env {
            let cases = sample_cases(&env, cfg)?;
            return Ok((Some(env), cases));
        }
        return Err(Error::Parameter(format!(
            "dataset directory {} has neither {TEST_CASES_FILE} nor {ENV_FILE}; nothing to rank against",
            dir.display()
        )));
    }
    let env = build_env(cfg)?;
    let cases = sample_cases(&env, cfg)?;
    Ok((Some(env), cases))
}

fn maybe_env(dir: &Path) -> Result<Option<SyntheticEnvironment>> {
    let path = dir.join(ENV_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn maybe_cases(dir: &Path) -> Result<Option<Vec<TestCase>>> {
    let path = dir.join(TEST_CASES_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Context distribution for reward-seeking training: exact when the
/// simulator is known, else the empirical frequencies of the log.
fn context_distribution(source: &DataSource) -> Vec<f64> {
    if let Some(env) = &source.env {
        return env.context_dist.clone();
    }
    let mut counts = vec![0.0; source.dataset.catalog.n_contexts];
    for x in &source.dataset.interactions {
        counts[x.context] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total.max(1.0)).collect()
}

/// A freshly initialized policy matching the configured encoder.
fn fresh_policy(cfg: &ExperimentConfig, dataset: &OfflineDataset) -> Result<ParametricPolicy> {
    let n_contexts = dataset.catalog.n_contexts;
    let n_actions = dataset.catalog.n_actions;
    match cfg.train.encoder {
        EncoderKind::OneHot => Ok(ParametricPolicy::one_hot(n_contexts, n_actions, cfg.seed)),
        EncoderKind::Learned { dim } => {
            Ok(ParametricPolicy::learned(n_contexts, n_actions, dim, cfg.seed))
        }
        EncoderKind::MeanHistory { dim } => {
            let histories = dataset.histories.clone().ok_or_else(|| {
                Error::Parameter("history-encoded policies need a dataset with histories".into())
            })?;
            ParametricPolicy::mean_history(n_actions, dim, histories, cfg.seed)
        }
    }
}

struct StepRow {
    step: usize,
    score: f64,
    oracle: Option<f64>,
    ndcg10: Option<f64>,
}

fn record_step(
    rows: &mut Vec<StepRow>,
    step: usize,
    policy: &ParametricPolicy,
    model: &RewardModel,
    dist: &[f64],
    source: &DataSource,
) -> Result<()> {
    let oracle = match &source.env {
        Some(env) => Some(oracle_value(env, policy)?),
        None => None,
    };
    let ndcg10 = match &source.test_cases {
        Some(cases) => Some(compute_metrics(policy, cases)?.ndcg10),
        None => None,
    };
    rows.push(StepRow {
        step,
        score: expected_rm_score(policy, model, dist),
        oracle,
        ndcg10,
    });
    Ok(())
}

fn write_final_metrics(
    cfg: &ExperimentConfig,
    source: &DataSource,
    policy: &ParametricPolicy,
    algo: &str,
    epoch: usize,
    avg_reward: Option<f64>,
) -> Result<()> {
    let Some(cases) = &source.test_cases else {
        log::info!("no test cases available; skipping metrics.csv");
        return Ok(());
    };
    let mut report = compute_metrics(policy, cases)?;
    report.avg_reward = avg_reward;
    if let Some(env) = &source.env {
        report.oracle_value = Some(oracle_value(env, policy)?);
    }
    let rows = [MetricsRow {
        algo: algo.to_string(),
        epoch,
        report,
    }];
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(&rows))
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    extra: &[(&str, serde_json::Value)],
) -> Result<()> {
    let mut config = serde_json::to_value(cfg)?;
    if let Some(map) = config.as_object_mut() {
        for (key, value) in extra {
            map.insert((*key).to_string(), value.clone());
        }
    }
    let manifest = run_manifest(command, cfg.seed, config);
    write_text(&cfg.out.join(RUN_MANIFEST_FILE), &pretty(&manifest)?)
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn algorithm_name(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::Bc => "bc",
        Algorithm::Rsft => "rsft",
        Algorithm::ExpRsft => "exp_rsft",
    }
}

fn describe(report: &BoundReport) -> String {
    let mut line = report.check_kind.clone();
    if let Some(lambda) = report.lambda {
        line.push_str(&format!(" lambda={}", format_float(lambda)));
    }
    if report.epsilon != 0.0 {
        line.push_str(&format!(" epsilon={}", format_float(report.epsilon)));
    }
    let violations: u64 = report.checks.iter().map(|c| c.violations).sum();
    let events: u64 = report.checks.iter().map(|c| c.n_events).sum();
    line.push_str(&format!(
        " violations={violations}/{events} accepted={}",
        report.accepted
    ));
    line
}

/// Per-step log of reward-seeking training; oracle and ranking columns
/// stay empty when no simulator or test cases are available.
fn steps_csv(rows: &[StepRow]) -> String {
    let mut out = String::from("step,avg_rm_score,oracle_value,ndcg10\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.step,
            format_float(row.score),
            row.oracle.map(format_float).unwrap_or_default(),
            row.ndcg10.map(format_float).unwrap_or_default(),
        ));
    }
    out
}

fn predictor_csv(rows: &[PredictorRow]) -> String {
    let mut out = String::from("predictor,mse,mae\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.name,
            format_float(row.mse),
            format_float(row.mae)
        ));
    }
    out
}

fn summary_csv(rows: &[AlgoSummary]) -> String {
    let mut out =
        String::from("algo,oracle_value,avg_rm_score,expected_rm_score,ndcg10,ndcg50,hr10,hr50,mrr\n");
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.name,
            format_float(s.oracle_value),
            format_float(s.avg_rm_score),
            format_float(s.expected_rm_score),
            format_float(s.metrics.ndcg10),
            format_float(s.metrics.ndcg50),
            format_float(s.metrics.hr10),
            format_float(s.metrics.hr50),
            format_float(s.metrics.mrr),
        ));
    }
    out
}
