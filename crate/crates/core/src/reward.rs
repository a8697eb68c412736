//! Outcome reward and training metrics.
//!
//! The only reward is exact match between the extracted answer and a gold
//! answer after light normalization (lowercase, punctuation stripped,
//! articles removed, whitespace collapsed). There is no partial credit and
//! no reward for well-formed formatting on its own. Answers are extracted
//! from policy-generated tokens only, so a gold string that merely shows up
//! in retrieved text earns nothing.

use serde::{Deserialize, Serialize};

use crate::rollout::{parse_tag_span, TaggedSequence};
use crate::scalar::Scalar;
use crate::vocab::{Special, Vocab};

/// Lowercases, strips punctuation, drops the articles `a`/`an`/`the`, and
/// collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let depunct: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    depunct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 if the normalized prediction equals any normalized gold, else 0.
pub fn em_reward<S: Scalar>(pred: Option<&str>, golds: &[String]) -> S {
    match pred {
        Some(p) => {
            let p = normalize_answer(p);
            if golds.iter().any(|g| normalize_answer(g) == p) {
                S::one()
            } else {
                S::zero()
            }
        }
        None => S::zero(),
    }
}

/// Content of the last complete answer span among the tokens the policy
/// generated itself.
pub fn extract_answer(vocab: &Vocab, seq: &TaggedSequence) -> Option<String> {
    let generated = seq.generated_tokens();
    parse_tag_span(&generated, Special::AnswerOpen.id(), Special::AnswerClose.id())
        .map(|(open, close)| vocab.detokenize(&generated[open + 1..close]))
}

/// One training step summarized for the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_train_reward: f64,
    pub mean_response_len: f64,
    pub mean_valid_search_calls: f64,
    pub policy_loss: f64,
    /// Absent for methods without a value head.
    pub value_loss: Option<f64>,
    pub mean_kl: f64,
}

/// Column order shared by the JSONL rows and the CSV export.
pub const METRICS_COLUMNS: [&str; 7] = [
    "step",
    "mean_train_reward",
    "mean_response_len",
    "mean_valid_search_calls",
    "policy_loss",
    "value_loss",
    "mean_kl",
];

impl MetricsRow {
    /// CSV rendering with an empty cell for a missing value loss.
    pub fn to_csv_row(&self) -> String {
        let value_loss = self.value_loss.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mean_train_reward,
            self.mean_response_len,
            self.mean_valid_search_calls,
            self.policy_loss,
            value_loss,
            self.mean_kl
        )
    }
}

/// Aggregates one step's rollouts into a [`MetricsRow`]. Response length
/// counts generated tokens only.
pub fn record_metrics<S: Scalar>(
    step: u64,
    rewards: &[S],
    generated_lens: &[usize],
    valid_search_calls: &[u32],
    policy_loss: f64,
    value_loss: Option<f64>,
    mean_kl: f64,
) -> MetricsRow {
    let n = rewards.len().max(1) as f64;
    let sum_r: f64 = rewards.iter().map(|r| r.to_f64().unwrap_or(0.0)).sum();
    let sum_len: f64 = generated_lens.iter().map(|&l| l as f64).sum();
    let sum_calls: f64 = valid_search_calls.iter().map(|&c| c as f64).sum();
    MetricsRow {
        step,
        mean_train_reward: sum_r / n,
        mean_response_len: sum_len / n,
        mean_valid_search_calls: sum_calls / n,
        policy_loss,
        value_loss,
        mean_kl,
    }
}
