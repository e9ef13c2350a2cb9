//! Top-K ranking metrics over held-out (context, target item) cases.

use serde::{Deserialize, Serialize};

use crate::env::SyntheticEnvironment;
use crate::error::{Error, Result};
use crate::tilt::{policy_value, Policy};

/// A held-out evaluation case: rank `target` among all actions for
/// `context`. `target_rating` is the relevance that qualified the case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub context: usize,
    pub target: usize,
    pub target_rating: f64,
}

/// Ranking metrics at the fixed cutoffs 10 and 50, plus mean reciprocal
/// rank. `avg_reward` (model-scored) and `oracle_value` (true-reward) are
/// filled by evaluation drivers that have the scorer or simulator at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_cases: usize,
    pub hr10: f64,
    pub hr50: f64,
    pub ndcg10: f64,
    pub ndcg50: f64,
    pub mrr: f64,
    pub avg_reward: Option<f64>,
    pub oracle_value: Option<f64>,
}

/// 1-based rank of `target` under `scores`. Ties resolve in favor of the
/// smaller action id, so equal-scoring actions with smaller ids push the
/// target down.
pub fn rank_of_target(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    let mut rank = 1;
    for (a, &s) in scores.iter().enumerate() {
        if s > t || (s == t && a < target) {
            rank += 1;
        }
    }
    rank
}

/// Computes HR@{10,50}, NDCG@{10,50} and MRR of `policy` over `cases`.
/// An empty case list is an error: silently returning NaN or zero would
/// look like a (terrible or perfect) model.
pub fn compute_metrics<P: Policy>(policy: &P, cases: &[TestCase]) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let n = cases.len() as f64;
    let (mut hr10, mut hr50, mut ndcg10, mut ndcg50, mut mrr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for case in cases {
        let scores = policy.action_scores(case.context);
        let rank = rank_of_target(&scores, case.target);
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
    Ok(MetricsReport {
        n_cases: cases.len(),
        hr10: hr10 / n,
        hr50: hr50 / n,
        ndcg10: ndcg10 / n,
        ndcg50: ndcg50 / n,
        mrr: mrr / n,
        avg_reward: None,
        oracle_value: None,
    })
}

/// Expected true reward of `policy` under the environment's context
/// distribution; the simulator-side ground truth for any scorer.
pub fn oracle_value<P: Policy>(env: &SyntheticEnvironment, policy: &P) -> Result<f64> {
    Ok(policy_value(env, policy)?.expected)
}
