//! Dataset loading, answer scoring and aggregation.
//!
//! Scoring follows the usual open-domain QA conventions: answers are
//! normalized (lowercase, no punctuation, no articles, single spaces), EM is
//! exact equality after normalization and F1 is token-multiset overlap; both
//! take the best score over all gold aliases.

mod dataset;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::gateway::UsageStats;

pub use dataset::{load_dataset, DatasetError, DatasetName, DatasetSpec, QAExample, Slice};
pub use metrics::{exact_match, f1, normalize_answer, token_f1};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub em: f64,
    pub f1: f64,
    pub usage: UsageStats,
}

impl ExampleScore {
    pub fn score<S: AsRef<str>>(prediction: &str, golds: &[S], usage: UsageStats) -> Self {
        Self {
            em: exact_match(prediction, golds),
            f1: f1(prediction, golds),
            usage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub totals: UsageStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot summarize an empty result set")]
pub struct EmptyResults;

/// Mean EM and F1 and summed usage.
pub fn summarize(results: &[ExampleScore]) -> Result<EvalSummary, EmptyResults> {
    if results.is_empty() {
        return Err(EmptyResults);
    }
    let n = results.len();
    // Sums of 0/1 EM values and of F1 values are order-independent in practice;
    // sort F1 before summing so the mean is bit-identical under permutation.
    let em_sum: f64 = results.iter().map(|r| r.em).sum();
    let mut f1s: Vec<f64> = results.iter().map(|r| r.f1).collect();
    f1s.sort_by(f64::total_cmp);
    let f1_sum: f64 = f1s.iter().sum();
    Ok(EvalSummary {
        n,
        em: em_sum / n as f64,
        f1: f1_sum / n as f64,
        totals: results.iter().map(|r| &r.usage).sum(),
    })
}
