//! Training configuration: a flat key-value file format, override handling,
//! and validation. Every key is spelled exactly like its field name, so the
//! documented file format and the struct never drift apart.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::HyperParams;
use crate::rollout::RolloutSettings;

/// Complete description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer family: "ppo" (clipped surrogate + value head) or "grpo"
    /// (group-relative, critic-free).
    pub method: String,
    pub total_steps: u64,
    /// Rollouts collected per step.
    pub batch_size: usize,
    /// Rollouts per optimizer update.
    pub mini_batch_size: usize,
    /// Rollouts per gradient-accumulation slice.
    pub micro_batch_size: usize,
    /// Rollouts per question for grpo.
    pub group_size: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    /// Fraction of total steps spent linearly warming the policy lr.
    pub warmup_ratio_policy: f64,
    pub warmup_ratio_value: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub value_coef: f64,
    /// Optimize only generated tokens (true) or all non-prompt tokens.
    pub mask_retrieved: bool,
    /// Divide group-centered rewards by the group std.
    pub grpo_std_normalize: bool,
    pub temperature: f64,
    pub top_p: f64,
    /// Maximum search/rethink turns per episode.
    pub budget: usize,
    /// Documents returned per search call.
    pub top_k: usize,
    pub max_action_tokens: usize,
    pub max_total_tokens: usize,
    pub max_retrieved_tokens: usize,
    /// Tokens of context the policy network sees.
    pub ctx_window: usize,
    pub d_emb: usize,
    pub d_hidden: usize,
    /// Half-width of the uniform parameter init.
    pub init_scale: f64,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub seed: u64,
    /// Checkpoint cadence in steps.
    pub checkpoint_every: u64,
    pub corpus_path: String,
    pub qa_path: String,
    pub vocab_path: String,
    pub out_dir: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: "ppo".into(),
            total_steps: 200,
            batch_size: 64,
            mini_batch_size: 32,
            micro_batch_size: 16,
            group_size: 5,
            lr_policy: 3e-3,
            lr_value: 1e-2,
            warmup_ratio_policy: 0.0,
            warmup_ratio_value: 0.0,
            gamma: 1.0,
            lambda: 1.0,
            clip_eps: 0.2,
            kl_beta: 0.001,
            value_coef: 0.5,
            mask_retrieved: true,
            grpo_std_normalize: true,
            temperature: 1.0,
            top_p: 1.0,
            budget: 4,
            top_k: 3,
            max_action_tokens: 64,
            max_total_tokens: 256,
            max_retrieved_tokens: 32,
            ctx_window: 8,
            d_emb: 16,
            d_hidden: 32,
            init_scale: 0.15,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            seed: 0,
            checkpoint_every: 100,
            corpus_path: "world/corpus.jsonl".into(),
            qa_path: "world/qa.jsonl".into(),
            vocab_path: "world/vocab.json".into(),
            out_dir: "runs/default".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

impl TrainConfig {
    /// Applies one `key = value` assignment; used by both the config file
    /// parser and `--override` flags.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "method" => self.method = value.to_string(),
            "total_steps" => self.total_steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "mini_batch_size" => self.mini_batch_size = parse(key, value)?,
            "micro_batch_size" => self.micro_batch_size = parse(key, value)?,
            "group_size" => self.group_size = parse(key, value)?,
            "lr_policy" => self.lr_policy = parse(key, value)?,
            "lr_value" => self.lr_value = parse(key, value)?,
            "warmup_ratio_policy" => self.warmup_ratio_policy = parse(key, value)?,
            "warmup_ratio_value" => self.warmup_ratio_value = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "clip_eps" => self.clip_eps = parse(key, value)?,
            "kl_beta" => self.kl_beta = parse(key, value)?,
            "value_coef" => self.value_coef = parse(key, value)?,
            "mask_retrieved" => self.mask_retrieved = parse(key, value)?,
            "grpo_std_normalize" => self.grpo_std_normalize = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "top_p" => self.top_p = parse(key, value)?,
            "budget" => self.budget = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "max_action_tokens" => self.max_action_tokens = parse(key, value)?,
            "max_total_tokens" => self.max_total_tokens = parse(key, value)?,
            "max_retrieved_tokens" => self.max_retrieved_tokens = parse(key, value)?,
            "ctx_window" => self.ctx_window = parse(key, value)?,
            "d_emb" => self.d_emb = parse(key, value)?,
            "d_hidden" => self.d_hidden = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "bm25_k1" => self.bm25_k1 = parse(key, value)?,
            "bm25_b" => self.bm25_b = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "corpus_path" => self.corpus_path = value.to_string(),
            "qa_path" => self.qa_path = value.to_string(),
            "vocab_path" => self.vocab_path = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped.
    pub fn parse_str(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1)))?;
            cfg.set_key(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<TrainConfig> {
        let text = fs::read_to_string(&path)?;
        Self::parse_str(&text)
    }

    /// Rejects inconsistent configurations before any training work starts.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.method != "ppo" && self.method != "grpo" {
            return fail(format!("method must be 'ppo' or 'grpo', got '{}'", self.method));
        }
        if self.batch_size == 0 || self.mini_batch_size == 0 || self.micro_batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if self.micro_batch_size > self.mini_batch_size || self.mini_batch_size > self.batch_size {
            return fail("need micro_batch_size <= mini_batch_size <= batch_size".into());
        }
        if self.batch_size % self.mini_batch_size != 0 {
            return fail("mini_batch_size must divide batch_size".into());
        }
        if self.mini_batch_size % self.micro_batch_size != 0 {
            return fail("micro_batch_size must divide mini_batch_size".into());
        }
        if self.method == "grpo" {
            if self.group_size == 0 {
                return fail("group_size must be positive".into());
            }
            if self.batch_size % self.group_size != 0 {
                return fail("group_size must divide batch_size for grpo".into());
            }
        }
        for (name, v) in [
            ("warmup_ratio_policy", self.warmup_ratio_policy),
            ("warmup_ratio_value", self.warmup_ratio_value),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return fail("gamma and lambda must lie in [0, 1]".into());
        }
        if self.clip_eps <= 0.0 || self.clip_eps >= 1.0 {
            return fail(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if self.kl_beta < 0.0 || self.value_coef < 0.0 {
            return fail("kl_beta and value_coef must be nonnegative".into());
        }
        if self.lr_policy <= 0.0 || self.lr_value <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if self.temperature < 0.0 {
            return fail("temperature must be nonnegative".into());
        }
        if self.top_p <= 0.0 || self.top_p > 1.0 {
            return fail(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.budget == 0 || self.top_k == 0 {
            return fail("budget and top_k must be positive".into());
        }
        if self.max_action_tokens == 0 || self.max_total_tokens == 0 || self.ctx_window == 0 {
            return fail("token limits and ctx_window must be positive".into());
        }
        if self.d_emb == 0 || self.d_hidden == 0 {
            return fail("network dimensions must be positive".into());
        }
        if self.init_scale < 0.0 {
            return fail("init_scale must be nonnegative".into());
        }
        if self.bm25_k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25_b) {
            return fail("bm25_k1 must be nonnegative and bm25_b in [0, 1]".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        Ok(())
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            gamma: self.gamma,
            lambda: self.lambda,
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            group_size: self.group_size,
            value_coef: self.value_coef,
            mask_retrieved: self.mask_retrieved,
            grpo_std_normalize: self.grpo_std_normalize,
        }
    }

    pub fn rollout_settings(&self) -> RolloutSettings {
        RolloutSettings {
            budget: self.budget,
            ctx_window: self.ctx_window,
            max_action_tokens: self.max_action_tokens,
            max_total_tokens: self.max_total_tokens,
            max_retrieved_tokens: self.max_retrieved_tokens,
            top_k: self.top_k,
        }
    }
}
