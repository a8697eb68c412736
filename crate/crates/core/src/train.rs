//! Training orchestration: deterministic rng streams, the collect/optimize
//! step loop, JSONL metrics, versioned checkpoints with bitwise resume, and
//! the evaluation / inspection entry points the command line composes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{context_window, AdamState, PolicyParams, ValueParams};
use crate::retrieval::CorpusIndex;
use crate::reward::{em_reward, record_metrics, MetricsRow, METRICS_COLUMNS};
use crate::rl::{
    gae, grpo_advantages, grpo_loss, optimized_positions, ppo_loss, BehaviorSnapshot, HyperParams,
    LossOutput, SequenceExample,
};
use crate::rollout::{
    rollout, Provenance, RolloutRecord, RolloutSettings, SamplingPolicy, Termination,
};
use crate::scalar::{count, real, Scalar};
use crate::vocab::Vocab;
use crate::world::{load_corpus, load_qa, load_vocab, QAItem};

/// Bumped whenever the checkpoint layout changes incompatibly.
pub const CHECKPOINT_VERSION: u32 = 1;

/// File name of the per-step metrics log inside a run directory.
pub const METRICS_FILE: &str = "metrics.jsonl";

// Stream purposes. Every random draw in a run comes from a generator keyed
// by (seed, purpose, major, minor), so any draw can be reproduced without
// serializing generator state: a checkpoint's config seed is the rng state.
const STREAM_INIT_POLICY: u64 = 1;
const STREAM_INIT_VALUE: u64 = 2;
const STREAM_QUESTION: u64 = 3;
const STREAM_ROLLOUT: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_INSPECT: u64 = 6;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one (seed, purpose, major, minor) cell.
fn stream_rng(seed: u64, purpose: u64, major: u64, minor: u64) -> ChaCha12Rng {
    let mut state = splitmix64(seed);
    for v in [purpose, major, minor] {
        state = splitmix64(state ^ v);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Learning rate under a linear warm-up: zero at step 0, `lr_max / 2`
/// halfway through the warm-up, `lr_max` from `warmup_steps` onward. A
/// zero-length warm-up means the full rate from the first step.
pub fn lr_at(lr_max: f64, warmup_steps: u64, step: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        lr_max
    } else {
        lr_max * step as f64 / warmup_steps as f64
    }
}

/// Everything needed to restart a run exactly where it stopped. Random
/// streams are re-derived from the config seed and the reference policy from
/// the init stream, so neither is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub version: u32,
    /// Completed optimization steps.
    pub step: u64,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub policy: PolicyParams<S>,
    pub value: Option<ValueParams<S>>,
    pub opt_policy: AdamState<S>,
    pub opt_value: Option<AdamState<S>>,
}

pub fn save_checkpoint<S, P>(path: P, ckpt: &Checkpoint<S>) -> Result<()>
where
    S: Scalar + Serialize,
    P: AsRef<Path>,
{
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint<S, P>(path: P) -> Result<Checkpoint<S>>
where
    S: Scalar + DeserializeOwned,
    P: AsRef<Path>,
{
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let ckpt: Checkpoint<S> = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint {}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (this build reads version {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    Ok(ckpt)
}

/// Errors unless every whitespace word of every text is in the vocabulary.
pub fn check_vocab_coverage<'a, I>(vocab: &Vocab, texts: I, what: &str) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    for text in texts {
        for word in text.split_whitespace() {
            if vocab.id(word).is_none() {
                return Err(Error::Data(format!(
                    "vocabulary mismatch: {what} contains unknown word '{}'",
                    word.to_ascii_lowercase()
                )));
            }
        }
    }
    Ok(())
}

fn load_world_data(cfg: &TrainConfig, vocab: &Vocab) -> Result<(CorpusIndex, Vec<QAItem>)> {
    let docs = load_corpus(&cfg.corpus_path)?;
    check_vocab_coverage(
        vocab,
        docs.iter().flat_map(|d| [d.title.as_str(), d.text.as_str()]),
        "the corpus",
    )?;
    let index = CorpusIndex::build(docs, cfg.bm25_k1, cfg.bm25_b)?;
    let qa = load_qa(&cfg.qa_path)?;
    if qa.is_empty() {
        return Err(Error::Data(format!("qa dataset {} is empty", cfg.qa_path)));
    }
    for item in &qa {
        let texts =
            std::iter::once(item.question.as_str()).chain(item.golds.iter().map(|g| g.as_str()));
        check_vocab_coverage(vocab, texts, "the qa data")?;
    }
    Ok((index, qa))
}

/// Owns one training run: data, networks, optimizer state and the step
/// counter. Construction writes `checkpoint_0.json` and truncates the
/// metrics log, so a directory always reflects exactly one run.
pub struct Trainer<S: Scalar> {
    cfg: TrainConfig,
    vocab: Vocab,
    index: CorpusIndex,
    qa: Vec<QAItem>,
    policy: PolicyParams<S>,
    value: Option<ValueParams<S>>,
    reference: PolicyParams<S>,
    opt_policy: AdamState<S>,
    opt_value: Option<AdamState<S>>,
    step: u64,
    hp: HyperParams,
    settings: RolloutSettings,
}

impl<S: Scalar + Serialize + DeserializeOwned> Trainer<S> {
    /// Starts a fresh run from `cfg`.
    pub fn new(cfg: TrainConfig) -> Result<Trainer<S>> {
        cfg.validate()?;
        let vocab = load_vocab(&cfg.vocab_path)?;
        let (index, qa) = load_world_data(&cfg, &vocab)?;

        let mut rng = stream_rng(cfg.seed, STREAM_INIT_POLICY, 0, 0);
        let policy = PolicyParams::init(
            vocab.len(),
            cfg.ctx_window,
            cfg.d_emb,
            cfg.d_hidden,
            cfg.init_scale,
            &mut rng,
        );
        let reference = policy.clone();
        let value = (cfg.method == "ppo").then(|| {
            let mut rng = stream_rng(cfg.seed, STREAM_INIT_VALUE, 0, 0);
            ValueParams::init(
                vocab.len(),
                cfg.ctx_window,
                cfg.d_emb,
                cfg.d_hidden,
                cfg.init_scale,
                &mut rng,
            )
        });
        let opt_policy = AdamState::new(&policy.net);
        let opt_value = value.as_ref().map(|v| AdamState::new(&v.net));

        let trainer = Trainer {
            hp: cfg.hyper_params(),
            settings: cfg.rollout_settings(),
            cfg,
            vocab,
            index,
            qa,
            policy,
            value,
            reference,
            opt_policy,
            opt_value,
            step: 0,
        };
        fs::create_dir_all(&trainer.cfg.out_dir)?;
        fs::write(trainer.metrics_path(), "")?;
        trainer.write_checkpoint()?;
        Ok(trainer)
    }

    /// Restarts from a checkpoint, optionally with config overrides. The
    /// network shape, the method and the vocabulary must stay what they
    /// were. Metrics rows at or past the checkpoint step are dropped so the
    /// log again matches an uninterrupted run.
    pub fn resume<P: AsRef<Path>>(path: P, overrides: &[(String, String)]) -> Result<Trainer<S>> {
        let ckpt: Checkpoint<S> = load_checkpoint(path)?;
        let mut cfg = ckpt.config;
        for (key, value) in overrides {
            cfg.set_key(key, value)?;
        }
        cfg.validate()?;

        let dims = ckpt.policy.net.dims;
        if dims.vocab != ckpt.vocab.len()
            || dims.ctx != cfg.ctx_window
            || dims.d_emb != cfg.d_emb
            || dims.d_hidden != cfg.d_hidden
        {
            return Err(Error::Checkpoint(
                "config overrides must not change the network shape".into(),
            ));
        }
        if (cfg.method == "ppo") != ckpt.value.is_some() {
            return Err(Error::Checkpoint(
                "config overrides must not change the training method".into(),
            ));
        }

        let vocab = ckpt.vocab;
        let (index, qa) = load_world_data(&cfg, &vocab)?;
        let mut rng = stream_rng(cfg.seed, STREAM_INIT_POLICY, 0, 0);
        let reference = PolicyParams::init(
            vocab.len(),
            cfg.ctx_window,
            cfg.d_emb,
            cfg.d_hidden,
            cfg.init_scale,
            &mut rng,
        );

        let trainer = Trainer {
            hp: cfg.hyper_params(),
            settings: cfg.rollout_settings(),
            cfg,
            vocab,
            index,
            qa,
            policy: ckpt.policy,
            value: ckpt.value,
            reference,
            opt_policy: ckpt.opt_policy,
            opt_value: ckpt.opt_value,
            step: ckpt.step,
        };
        fs::create_dir_all(&trainer.cfg.out_dir)?;
        trainer.prune_metrics()?;
        Ok(trainer)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn policy(&self) -> &PolicyParams<S> {
        &self.policy
    }

    pub fn value(&self) -> Option<&ValueParams<S>> {
        self.value.as_ref()
    }

    #[cfg(test)]
    pub(crate) fn policy_net_mut(&mut self) -> &mut crate::model::TokenMlp<S> {
        &mut self.policy.net
    }

    fn metrics_path(&self) -> PathBuf {
        Path::new(&self.cfg.out_dir).join(METRICS_FILE)
    }

    fn checkpoint_path(&self, name: &str) -> PathBuf {
        Path::new(&self.cfg.out_dir).join(format!("checkpoint_{name}.json"))
    }

    fn to_checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.step,
            config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            policy: self.policy.clone(),
            value: self.value.clone(),
            opt_policy: self.opt_policy.clone(),
            opt_value: self.opt_value.clone(),
        }
    }

    /// Writes `checkpoint_<step>.json` into the run directory.
    pub fn write_checkpoint(&self) -> Result<PathBuf> {
        let path = self.checkpoint_path(&self.step.to_string());
        save_checkpoint(&path, &self.to_checkpoint())?;
        Ok(path)
    }

    fn append_metrics(&self, row: &MetricsRow) -> Result<()> {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.metrics_path())?;
        writeln!(file, "{}", serde_json::to_string(row)?)?;
        Ok(())
    }

    /// Drops metrics rows at or past the current step; missing file means an
    /// empty log.
    fn prune_metrics(&self) -> Result<()> {
        let path = self.metrics_path();
        let mut kept = String::new();
        if path.exists() {
            for line in fs::read_to_string(&path)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: MetricsRow = serde_json::from_str(line)
                    .map_err(|e| Error::Data(format!("malformed metrics row: {e}")))?;
                if row.step < self.step {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        fs::write(path, kept)?;
        Ok(())
    }

    /// Runs at most `n` steps (fewer if `total_steps` is reached), writing a
    /// metrics row each step and checkpoints on the configured cadence plus
    /// at the very end of the run.
    pub fn run_steps(&mut self, n: u64) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        for _ in 0..n {
            if self.step >= self.cfg.total_steps {
                break;
            }
            let row = self.train_step()?;
            self.append_metrics(&row)?;
            rows.push(row);
            self.step += 1;
            if self.step % self.cfg.checkpoint_every == 0 || self.step == self.cfg.total_steps {
                self.write_checkpoint()?;
            }
        }
        Ok(rows)
    }

    /// Runs to `total_steps`.
    pub fn run(&mut self) -> Result<Vec<MetricsRow>> {
        self.run_steps(self.cfg.total_steps.saturating_sub(self.step))
    }

    /// One optimization step: collect a batch of episodes under a frozen
    /// snapshot of the policy, compute advantages, then sweep the batch once
    /// in mini-batch updates with micro-batch gradient accumulation.
    fn train_step(&mut self) -> Result<MetricsRow> {
        let step = self.step;
        let grpo = self.cfg.method == "grpo";
        let group = if grpo { self.cfg.group_size } else { 1 };
        let n_groups = self.cfg.batch_size / group;
        let snapshot = self.policy.clone();

        // Collection. Each group shares a question; each member rolls out
        // with its own stream.
        let mut records: Vec<RolloutRecord<S>> = Vec::with_capacity(self.cfg.batch_size);
        let mut rewards: Vec<S> = Vec::with_capacity(self.cfg.batch_size);
        for g in 0..n_groups {
            let mut qrng = stream_rng(self.cfg.seed, STREAM_QUESTION, step, g as u64);
            let item = &self.qa[qrng.gen_range(0..self.qa.len())];
            for j in 0..group {
                let mut policy = SamplingPolicy {
                    params: &snapshot,
                    temperature: self.cfg.temperature,
                    top_p: self.cfg.top_p,
                };
                let mut rrng =
                    stream_rng(self.cfg.seed, STREAM_ROLLOUT, step, (g * group + j) as u64);
                let rec = rollout(
                    &mut policy,
                    &self.index,
                    &self.vocab,
                    &item.question,
                    &self.settings,
                    &mut rrng,
                );
                rewards.push(em_reward(rec.answer.as_deref(), &item.golds));
                records.push(rec);
            }
        }
        let behavior = BehaviorSnapshot::collect(snapshot, &records, self.hp.mask_retrieved);

        // Advantages and value targets, scattered to full sequence length.
        let mut advantages: Vec<Vec<S>> = Vec::with_capacity(records.len());
        let mut targets: Vec<Vec<S>> = Vec::with_capacity(records.len());
        if grpo {
            for g in 0..n_groups {
                let adv =
                    grpo_advantages(&rewards[g * group..(g + 1) * group], self.hp.grpo_std_normalize);
                for (j, a) in adv.into_iter().enumerate() {
                    advantages.push(vec![a; records[g * group + j].seq.len()]);
                    targets.push(Vec::new());
                }
            }
        } else {
            let value = self.value.as_ref().expect("ppo trains a value head");
            for (rec, &r) in records.iter().zip(&rewards) {
                let pos = optimized_positions(&rec.seq, self.hp.mask_retrieved);
                let mut adv_full = vec![S::zero(); rec.seq.len()];
                let mut tgt_full = vec![S::zero(); rec.seq.len()];
                if !pos.is_empty() {
                    let values: Vec<S> = pos
                        .iter()
                        .map(|&i| {
                            value.value(&context_window(&rec.seq.tokens[..i], self.cfg.ctx_window))
                        })
                        .collect();
                    let mut step_rewards = vec![S::zero(); pos.len()];
                    *step_rewards.last_mut().unwrap() = r;
                    let out = gae(&step_rewards, &values, self.cfg.gamma, self.cfg.lambda);
                    for (k, &i) in pos.iter().enumerate() {
                        adv_full[i] = out.advantages[k];
                        tgt_full[i] = out.value_targets[k];
                    }
                }
                advantages.push(adv_full);
                targets.push(tgt_full);
            }
        }

        // Optimization sweep.
        let warmup_policy = warmup_steps(self.cfg.warmup_ratio_policy, self.cfg.total_steps);
        let warmup_value = warmup_steps(self.cfg.warmup_ratio_value, self.cfg.total_steps);
        let lr_policy = real::<S>(lr_at(self.cfg.lr_policy, warmup_policy, step));
        let lr_value = real::<S>(lr_at(self.cfg.lr_value, warmup_value, step));
        let mut surrogate_sum = 0.0;
        let mut value_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut eff_total = 0usize;
        for mini_start in (0..self.cfg.batch_size).step_by(self.cfg.mini_batch_size) {
            let mini_end = mini_start + self.cfg.mini_batch_size;
            let mut parts: Vec<LossOutput<S>> = Vec::new();
            for micro_start in (mini_start..mini_end).step_by(self.cfg.micro_batch_size) {
                let micro_end = micro_start + self.cfg.micro_batch_size;
                let batch: Vec<SequenceExample<'_, S>> = (micro_start..micro_end)
                    .map(|i| SequenceExample {
                        seq: &records[i].seq,
                        old_log_probs: &behavior.old_log_probs[i],
                        advantages: &advantages[i],
                        value_targets: &targets[i],
                    })
                    .collect();
                let out = if grpo {
                    grpo_loss(&self.policy, &self.reference, &batch, &self.hp)
                } else {
                    let value = self.value.as_ref().expect("ppo trains a value head");
                    ppo_loss(&self.policy, value, &self.reference, &batch, &self.hp)
                };
                if !out.loss.is_finite() {
                    return self.abort_non_finite(step, "loss");
                }
                parts.push(out);
            }

            // Exact whole-mini-batch gradient: each slice normalized by its
            // own contributing-sequence count, reweighted here.
            let mini_eff: usize = parts.iter().map(|p| p.effective_sequences).sum();
            if mini_eff == 0 {
                continue;
            }
            let denom = count::<S>(mini_eff);
            let mut policy_grad = self.policy.net.zeros_like();
            let mut value_grad = self.value.as_ref().map(|v| v.net.zeros_like());
            for part in &parts {
                if part.effective_sequences == 0 {
                    continue;
                }
                let w = count::<S>(part.effective_sequences) / denom;
                policy_grad.add_scaled(&part.policy_grad, w);
                if let (Some(dst), Some(src)) = (value_grad.as_mut(), part.value_grad.as_ref()) {
                    dst.add_scaled(src, w);
                }
                let wf = part.effective_sequences as f64;
                surrogate_sum += to_f64(part.surrogate_loss) * wf;
                value_sum += to_f64(part.value_loss) * wf;
                kl_sum += to_f64(part.mean_kl) * wf;
            }
            eff_total += mini_eff;

            self.opt_policy.step(&mut self.policy.net, &policy_grad, lr_policy);
            if let (Some(value), Some(opt), Some(grad)) =
                (self.value.as_mut(), self.opt_value.as_mut(), value_grad.as_ref())
            {
                opt.step(&mut value.net, grad, lr_value);
            }
            if !self.policy.net.is_finite()
                || self.value.as_ref().is_some_and(|v| !v.net.is_finite())
            {
                return self.abort_non_finite(step, "parameters");
            }
        }

        let eff = eff_total.max(1) as f64;
        let lens: Vec<usize> = records.iter().map(|r| r.seq.generated_count()).collect();
        let calls: Vec<u32> = records.iter().map(|r| r.valid_search_calls).collect();
        Ok(record_metrics(
            step,
            &rewards,
            &lens,
            &calls,
            surrogate_sum / eff,
            (!grpo).then_some(value_sum / eff),
            kl_sum / eff,
        ))
    }

    fn abort_non_finite(&self, step: u64, what: &str) -> Result<MetricsRow> {
        let path = self.checkpoint_path("diverged");
        save_checkpoint(&path, &self.to_checkpoint())?;
        Err(Error::NonFinite {
            step,
            what: format!("{what} (diagnostic checkpoint written to {})", path.display()),
        })
    }

    /// Greedy evaluation of the current policy over `qa`.
    pub fn evaluate(&self, qa: &[QAItem]) -> Result<EvalReport> {
        evaluate(&self.policy, &self.vocab, &self.index, qa, &self.settings, self.cfg.seed)
    }
}

fn warmup_steps(ratio: f64, total_steps: u64) -> u64 {
    (ratio * total_steps as f64).round() as u64
}

fn to_f64<S: Scalar>(x: S) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// One evaluated question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: String,
    pub golds: Vec<String>,
    pub predicted: Option<String>,
    pub em: f64,
    pub valid_search_calls: u32,
}

/// Aggregate of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_em: f64,
    pub items: Vec<EvalItem>,
}

/// Scores `policy` on `qa` by greedy decoding (temperature zero); pure apart
/// from reading its arguments, so callers can evaluate any checkpoint
/// against any dataset.
pub fn evaluate<S: Scalar>(
    policy: &PolicyParams<S>,
    vocab: &Vocab,
    index: &CorpusIndex,
    qa: &[QAItem],
    settings: &RolloutSettings,
    seed: u64,
) -> Result<EvalReport> {
    if qa.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    for item in qa {
        let texts =
            std::iter::once(item.question.as_str()).chain(item.golds.iter().map(|g| g.as_str()));
        check_vocab_coverage(vocab, texts, "the evaluation data")?;
    }
    let mut items = Vec::with_capacity(qa.len());
    let mut sum = 0.0;
    for (i, item) in qa.iter().enumerate() {
        let mut greedy = SamplingPolicy { params: policy, temperature: 0.0, top_p: 1.0 };
        let mut rng = stream_rng(seed, STREAM_EVAL, i as u64, 0);
        let rec = rollout(&mut greedy, index, vocab, &item.question, settings, &mut rng);
        let em = to_f64(em_reward::<S>(rec.answer.as_deref(), &item.golds));
        sum += em;
        items.push(EvalItem {
            question: item.question.clone(),
            golds: item.golds.clone(),
            predicted: rec.answer,
            em,
            valid_search_calls: rec.valid_search_calls,
        });
    }
    Ok(EvalReport { mean_em: sum / items.len() as f64, items })
}

/// One token of an inspected episode, with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectToken {
    pub token: String,
    pub provenance: Provenance,
}

/// A single sampled episode rendered for reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub question: String,
    pub tokens: Vec<InspectToken>,
    pub answer: Option<String>,
    pub terminated_by: Termination,
    pub search_calls: u32,
    pub valid_search_calls: u32,
}

/// Samples one episode for `question` and reports every token with its
/// provenance.
#[allow(clippy::too_many_arguments)]
pub fn inspect<S: Scalar>(
    policy: &PolicyParams<S>,
    vocab: &Vocab,
    index: &CorpusIndex,
    question: &str,
    settings: &RolloutSettings,
    temperature: f64,
    top_p: f64,
    seed: u64,
) -> InspectReport {
    let mut sampler = SamplingPolicy { params: policy, temperature, top_p };
    let mut rng = stream_rng(seed, STREAM_INSPECT, 0, 0);
    let rec: RolloutRecord<S> = rollout(&mut sampler, index, vocab, question, settings, &mut rng);
    let tokens = rec
        .seq
        .tokens
        .iter()
        .zip(&rec.seq.provenance)
        .map(|(&tok, &provenance)| InspectToken { token: vocab.surface(tok).to_string(), provenance })
        .collect();
    InspectReport {
        question: question.to_string(),
        tokens,
        answer: rec.answer,
        terminated_by: rec.terminated_by,
        search_calls: rec.search_calls,
        valid_search_calls: rec.valid_search_calls,
    }
}

/// Reads every metrics row of a run directory, in file order.
pub fn read_metrics<P: AsRef<Path>>(run_dir: P) -> Result<Vec<MetricsRow>> {
    let path = run_dir.as_ref().join(METRICS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read metrics log {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricsRow = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("malformed metrics row {} in {}: {e}", i + 1, path.display()))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Converts a run's metrics log to CSV; returns the row count.
pub fn export_metrics_csv<P: AsRef<Path>, Q: AsRef<Path>>(run_dir: P, csv_path: Q) -> Result<usize> {
    let rows = read_metrics(run_dir)?;
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for row in &rows {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    let csv_path = csv_path.as_ref();
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(csv_path, out)?;
    Ok(rows.len())
}
