//! End-to-end reward-hacking demonstration.
//!
//! Trains cloning and reward-weighted policies on the logged data, fits a
//! reward model to the same observations, then lets PPO and DPO optimize
//! against that model. The weighted-SFT runs stay on the data support; the
//! optimizers drift to wherever the model extrapolates high, so their
//! model score rises while their true value collapses.

use crate::benchmark::HackBenchmark;
use crate::dataio::HackRow;
use crate::dpo::run_dpo;
use crate::env::SyntheticEnvironment;
use crate::error::Result;
use crate::metrics::{compute_metrics, oracle_value, MetricsReport, TestCase};
use crate::error::Error;
use crate::policy::ParametricPolicy;
use crate::ppo::run_ppo;
use crate::rm::{
    avg_reward_score, evaluate_predictors, expected_rm_score, train_reward_model, FitReport,
    NaivePredictors, PredictorRow, RewardModel,
};
use crate::train::{train, EncoderKind, EvalHooks, TrainTrace};

/// Monte-Carlo generations for the shared model-score evaluation.
const RM_SCORE_GENERATIONS: usize = 2000;
/// One seed for every algorithm's model-score evaluation, so the scores
/// are comparable draws.
const RM_SCORE_SEED: u64 = 7070;

/// Final evaluation of one algorithm in the demo.
#[derive(Debug, Clone)]
pub struct AlgoSummary {
    pub name: &'static str,
    /// Expected true reward under the simulator.
    pub oracle_value: f64,
    /// Monte-Carlo average reward-model score of sampled recommendations.
    pub avg_rm_score: f64,
    /// Exact expectation of the model score, for cross-checking the MC.
    pub expected_rm_score: f64,
    pub metrics: MetricsReport,
}

/// Everything the demo produces, ready for CSV/JSON emission.
#[derive(Debug, Clone)]
pub struct HackDemoResult {
    /// bc, rsft, exp_rsft, ppo, dpo in that order.
    pub summaries: Vec<AlgoSummary>,
    pub sft_traces: Vec<(&'static str, TrainTrace)>,
    pub ppo_steps: Vec<HackRow>,
    pub dpo_steps: Vec<HackRow>,
    pub rm_report: FitReport,
    /// Reward model vs mean predictors on the held-out split.
    pub predictor_rows: Vec<PredictorRow>,
    pub policies: Vec<(&'static str, ParametricPolicy)>,
}

fn summarize(
    name: &'static str,
    policy: &ParametricPolicy,
    env: &SyntheticEnvironment,
    model: &RewardModel,
    cases: &[TestCase],
) -> Result<AlgoSummary> {
    let mut metrics = compute_metrics(policy, cases)?;
    metrics.oracle_value = Some(oracle_value(env, policy)?);
    let avg = avg_reward_score(
        policy,
        model,
        &env.context_dist,
        RM_SCORE_GENERATIONS,
        RM_SCORE_SEED,
    )?;
    Ok(AlgoSummary {
        name,
        oracle_value: metrics.oracle_value.expect("just set"),
        avg_rm_score: avg,
        expected_rm_score: expected_rm_score(policy, model, &env.context_dist),
        metrics,
    })
}

/// Runs the full demonstration on a benchmark setup.
pub fn run_hack_demo(bench: &HackBenchmark) -> Result<HackDemoResult> {
    let hooks = EvalHooks {
        env: Some(&bench.env),
        reference: None,
        test_cases: Some(&bench.test_cases),
    };
    let (bc_policy, bc_trace) = train(&bench.dataset, &bench.bc, hooks)?;
    let (rsft_policy, rsft_trace) = train(&bench.dataset, &bench.rsft, hooks)?;
    let (exp_policy, exp_trace) = train(&bench.dataset, &bench.exp_rsft, hooks)?;

    let artifacts = train_reward_model(&bench.dataset, &bench.rm)?;
    let naive = NaivePredictors::fit(bench.dataset.catalog, &artifacts.train)?;
    let predictor_rows = evaluate_predictors(&artifacts.validation, &artifacts.model, &naive)?;
    let model = &artifacts.model;

    // The optimizers get the model and nothing else: fresh policies, no
    // logged data. Where the supervised runs inherit the log's support,
    // these two trust the model's scores everywhere, which is exactly the
    // failure being demonstrated.
    let mut ppo_steps = Vec::with_capacity(bench.ppo.steps);
    let ppo_policy = run_ppo(
        fresh_policy(bench, bench.ppo.seed)?,
        model,
        &bench.env.context_dist,
        &bench.ppo,
        |step, policy, _info| {
            ppo_steps.push(step_row(step, policy, &bench.env, model, &bench.test_cases)?);
            Ok(())
        },
    )?;
    let mut dpo_steps = Vec::with_capacity(bench.dpo.steps);
    let dpo_policy = run_dpo(
        fresh_policy(bench, bench.dpo.seed)?,
        model,
        &bench.env.context_dist,
        &bench.dpo,
        |step, policy, _info| {
            dpo_steps.push(step_row(step, policy, &bench.env, model, &bench.test_cases)?);
            Ok(())
        },
    )?;

    let summaries = vec![
        summarize("bc", &bc_policy, &bench.env, model, &bench.test_cases)?,
        summarize("rsft", &rsft_policy, &bench.env, model, &bench.test_cases)?,
        summarize("exp_rsft", &exp_policy, &bench.env, model, &bench.test_cases)?,
        summarize("ppo", &ppo_policy, &bench.env, model, &bench.test_cases)?,
        summarize("dpo", &dpo_policy, &bench.env, model, &bench.test_cases)?,
    ];

    Ok(HackDemoResult {
        summaries,
        sft_traces: vec![("bc", bc_trace), ("rsft", rsft_trace), ("exp_rsft", exp_trace)],
        ppo_steps,
        dpo_steps,
        rm_report: artifacts.report,
        predictor_rows,
        policies: vec![
            ("bc", bc_policy),
            ("rsft", rsft_policy),
            ("exp_rsft", exp_policy),
            ("ppo", ppo_policy),
            ("dpo", dpo_policy),
        ],
    })
}

/// Untrained policy matching the benchmark's encoder family.
fn fresh_policy(bench: &HackBenchmark, seed: u64) -> Result<ParametricPolicy> {
    let catalog = bench.env.catalog;
    match bench.bc.encoder {
        EncoderKind::OneHot => Ok(ParametricPolicy::one_hot(
            catalog.n_contexts,
            catalog.n_actions,
            seed,
        )),
        EncoderKind::Learned { dim } => Ok(ParametricPolicy::learned(
            catalog.n_contexts,
            catalog.n_actions,
            dim,
            seed,
        )),
        EncoderKind::MeanHistory { .. } => Err(Error::parameter(
            "the hacking demo needs an encoder that works without histories",
        )),
    }
}

fn step_row(
    step: usize,
    policy: &ParametricPolicy,
    env: &SyntheticEnvironment,
    model: &RewardModel,
    cases: &[TestCase],
) -> Result<HackRow> {
    let metrics = compute_metrics(policy, cases)?;
    Ok(HackRow {
        step,
        avg_rm_score: expected_rm_score(policy, model, &env.context_dist),
        oracle_value: oracle_value(env, policy)?,
        ndcg10: Some(metrics.ndcg10),
    })
}

impl HackDemoResult {
    pub fn summary(&self, name: &str) -> Option<&AlgoSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }
}
