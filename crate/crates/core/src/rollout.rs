//! Multi-turn rollout: generate, act, splice, repeat.
//!
//! An episode starts from a fixed instruction prompt plus the question. The
//! policy generates one action segment at a time; a segment ends at the first
//! of `</search>`, `</answer>`, `<eos>`, or the per-action token cap. A
//! complete `<search>...</search>` span triggers retrieval and splices the
//! results between `<information>` tags; a complete `<answer>...</answer>`
//! span ends the episode; anything else gets a canned rethink nudge spliced
//! in. Every token carries a provenance tag so the losses can exclude
//! everything the policy did not generate itself.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{context_window, PolicyParams};
use crate::retrieval::CorpusIndex;
use crate::scalar::Scalar;
use crate::vocab::{Special, TokenId, Vocab};

/// Instruction prefix prepended to every question (words only, punctuation
/// pre-split so the whitespace tokenizer keeps the vocabulary closed).
pub const PROMPT_TEMPLATE: &str = "answer the given question . you must conduct reasoning inside \
<think> and </think> first every time you get new information . after reasoning , if you find you \
lack some knowledge , you can call a search engine by <search> query </search> and it will return \
the top searched results between <information> and </information> . you can search as many times \
as you want . if you find no further external knowledge needed , you can directly provide the \
answer inside <answer> and </answer> without detailed illustrations . for example , <answer> xxx \
</answer> . question :";

/// Nudge spliced in after an action with no complete search or answer span.
pub const RETHINK_TEXT: &str = "my action is not correct . let me rethink .";

/// Separator between retrieved passages inside an information block.
pub const PASSAGE_SEPARATOR: &str = ";";

/// Where a token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Instruction template and question.
    Prompt,
    /// Sampled from the policy.
    Generated,
    /// Text returned by retrieval.
    Retrieved,
    /// Engine-inserted scaffolding: information tags and rethink nudges.
    Injected,
}

/// Token sequence with per-token provenance and action-segment boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSequence {
    pub tokens: Vec<TokenId>,
    pub provenance: Vec<Provenance>,
    /// Index where each action segment begins.
    pub turn_starts: Vec<usize>,
}

impl TaggedSequence {
    pub fn new() -> TaggedSequence {
        TaggedSequence { tokens: Vec::new(), provenance: Vec::new(), turn_starts: Vec::new() }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn push(&mut self, tok: TokenId, prov: Provenance) {
        self.tokens.push(tok);
        self.provenance.push(prov);
    }

    pub fn generated_count(&self) -> usize {
        self.provenance.iter().filter(|&&p| p == Provenance::Generated).count()
    }

    /// Tokens the policy generated itself, in order.
    pub fn generated_tokens(&self) -> Vec<TokenId> {
        self.tokens
            .iter()
            .zip(&self.provenance)
            .filter(|(_, &p)| p == Provenance::Generated)
            .map(|(&t, _)| t)
            .collect()
    }

    /// Checks the structural invariants: equal-length vectors, sorted
    /// in-range turn starts, and every maximal run of retrieved tokens
    /// bracketed by injected information tags.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.tokens.len() != self.provenance.len() {
            return Err("tokens and provenance lengths differ".into());
        }
        if !self.turn_starts.windows(2).all(|w| w[0] < w[1]) {
            return Err("turn starts not strictly increasing".into());
        }
        if self.turn_starts.iter().any(|&i| i > self.tokens.len()) {
            return Err("turn start out of range".into());
        }
        let mut i = 0;
        while i < self.tokens.len() {
            if self.provenance[i] == Provenance::Retrieved {
                let start = i;
                while i < self.tokens.len() && self.provenance[i] == Provenance::Retrieved {
                    i += 1;
                }
                let before_ok = start > 0
                    && self.tokens[start - 1] == Special::InfoOpen.id()
                    && self.provenance[start - 1] == Provenance::Injected;
                let after_ok = i < self.tokens.len()
                    && self.tokens[i] == Special::InfoClose.id()
                    && self.provenance[i] == Provenance::Injected;
                if !before_ok || !after_ok {
                    return Err(format!("retrieved run at {start}..{i} not information-bracketed"));
                }
            } else {
                i += 1;
            }
        }
        Ok(())
    }
}

impl Default for TaggedSequence {
    fn default() -> Self {
        TaggedSequence::new()
    }
}

/// Per-token optimization mask: true exactly where the policy generated the
/// token itself.
pub fn loss_mask(seq: &TaggedSequence) -> Vec<bool> {
    seq.provenance.iter().map(|&p| p == Provenance::Generated).collect()
}

/// Finds the last complete `open ... close` span, scanning left to right and
/// letting a later `open` supersede an unclosed earlier one. Returns the tag
/// positions `(open_idx, close_idx)`.
pub fn parse_tag_span(tokens: &[TokenId], open: TokenId, close: TokenId) -> Option<(usize, usize)> {
    let mut pending: Option<usize> = None;
    let mut last: Option<(usize, usize)> = None;
    for (i, &tok) in tokens.iter().enumerate() {
        if tok == open {
            pending = Some(i);
        } else if tok == close {
            if let Some(start) = pending.take() {
                last = Some((start, i));
            }
        }
    }
    last
}

/// Template plus question, all tagged [`Provenance::Prompt`].
pub fn build_prompt(vocab: &Vocab, question: &str) -> Vec<TokenId> {
    let mut ids = vocab.tokenize(PROMPT_TEMPLATE);
    ids.extend(vocab.tokenize(question));
    ids
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// A complete answer span was produced.
    Answer,
    /// The action budget ran out with no answer.
    Budget,
    /// The total token cap was hit.
    MaxLen,
}

/// Mechanical limits for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSettings {
    /// Number of actions the policy may take.
    pub budget: usize,
    /// Context window fed to the policy.
    pub ctx_window: usize,
    /// Per-action generation cap.
    pub max_action_tokens: usize,
    /// Hard cap on total sequence length, prompt included.
    pub max_total_tokens: usize,
    /// Cap on retrieved tokens spliced per search call.
    pub max_retrieved_tokens: usize,
    /// Passages requested per search call.
    pub top_k: usize,
}

/// Everything one episode produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord<S> {
    pub seq: TaggedSequence,
    /// Behavior log-probability of each generated token, in sequence order.
    pub behavior_log_probs: Vec<S>,
    pub search_calls: u32,
    pub valid_search_calls: u32,
    pub answer: Option<String>,
    pub terminated_by: Termination,
}

/// Token source driving a rollout: the real sampler or a test script.
pub trait ActionPolicy<S> {
    fn next_token<R: Rng>(&mut self, ctx: &[TokenId], rng: &mut R) -> (TokenId, S);
}

/// Samples from a [`PolicyParams`] at a fixed temperature / top-p.
pub struct SamplingPolicy<'a, S> {
    pub params: &'a PolicyParams<S>,
    pub temperature: f64,
    pub top_p: f64,
}

impl<'a, S: Scalar> ActionPolicy<S> for SamplingPolicy<'a, S> {
    fn next_token<R: Rng>(&mut self, ctx: &[TokenId], rng: &mut R) -> (TokenId, S) {
        self.params.sample(ctx, self.temperature, self.top_p, rng)
    }
}

/// Plays back a fixed token list, then repeats `<eos>` forever. Log-probs are
/// reported as zero (probability one) for loss plumbing in tests.
pub struct ScriptedPolicy {
    queue: VecDeque<TokenId>,
}

impl ScriptedPolicy {
    pub fn new<I: IntoIterator<Item = TokenId>>(tokens: I) -> ScriptedPolicy {
        ScriptedPolicy { queue: tokens.into_iter().collect() }
    }

    /// Convenience: script given as whitespace text.
    pub fn from_text(vocab: &Vocab, text: &str) -> ScriptedPolicy {
        ScriptedPolicy::new(vocab.tokenize(text))
    }
}

impl<S: Scalar> ActionPolicy<S> for ScriptedPolicy {
    fn next_token<R: Rng>(&mut self, _ctx: &[TokenId], _rng: &mut R) -> (TokenId, S) {
        (self.queue.pop_front().unwrap_or(Special::Eos.id()), S::zero())
    }
}

/// Renders retrieved passages as `title : text`, lowest rank first so the
/// best passage ends up adjacent to the continuation point, separated by
/// [`PASSAGE_SEPARATOR`]. Truncation to `cap` drops lowest-ranked words
/// first (i.e. from the front).
fn render_passages(vocab: &Vocab, hits: &[crate::retrieval::RetrievedDoc<f64>], cap: usize) -> Vec<TokenId> {
    let mut words = Vec::new();
    for (i, hit) in hits.iter().rev().enumerate() {
        if i > 0 {
            words.extend(vocab.tokenize(PASSAGE_SEPARATOR));
        }
        words.extend(vocab.tokenize(&hit.title));
        words.extend(vocab.tokenize(":"));
        words.extend(vocab.tokenize(&hit.text));
    }
    if words.len() > cap {
        words.drain(..words.len() - cap);
    }
    words
}

/// Runs one episode of the generate/act loop described in the module docs.
///
/// Tie-breaks are fixed: the action budget is checked before the length cap,
/// a search span takes precedence over an answer span in the same segment
/// (both cannot be complete at once, since either closing tag ends the
/// segment), and an information or rethink splice that no longer fits ends
/// the episode as [`Termination::MaxLen`].
pub fn rollout<S: Scalar, P: ActionPolicy<S>, R: Rng>(
    policy: &mut P,
    index: &CorpusIndex,
    vocab: &Vocab,
    question: &str,
    settings: &RolloutSettings,
    rng: &mut R,
) -> RolloutRecord<S> {
    let mut seq = TaggedSequence::new();
    for tok in build_prompt(vocab, question) {
        seq.push(tok, Provenance::Prompt);
    }
    let mut behavior_log_probs = Vec::new();
    let mut search_calls = 0u32;
    let mut valid_search_calls = 0u32;
    let mut answer = None;
    let mut actions_taken = 0usize;

    let stop_tokens =
        [Special::SearchClose.id(), Special::AnswerClose.id(), Special::Eos.id()];

    let terminated_by = 'episode: loop {
        if actions_taken >= settings.budget {
            break Termination::Budget;
        }
        if seq.len() >= settings.max_total_tokens {
            break Termination::MaxLen;
        }
        seq.turn_starts.push(seq.len());
        let action_start = seq.len();

        // Generate one segment.
        let mut stopped = false;
        while seq.len() < settings.max_total_tokens
            && seq.len() - action_start < settings.max_action_tokens
        {
            let ctx = context_window(&seq.tokens, settings.ctx_window);
            let (tok, lp) = policy.next_token(&ctx, rng);
            seq.push(tok, Provenance::Generated);
            behavior_log_probs.push(lp);
            if stop_tokens.contains(&tok) {
                stopped = true;
                break;
            }
        }
        if !stopped && seq.len() >= settings.max_total_tokens {
            break Termination::MaxLen;
        }
        let segment = &seq.tokens[action_start..];

        if let Some((open, close)) =
            parse_tag_span(segment, Special::SearchOpen.id(), Special::SearchClose.id())
        {
            // Search action: retrieve and splice an information block.
            search_calls += 1;
            let query = vocab.detokenize(&segment[open + 1..close]);
            let hits = if query.is_empty() {
                Vec::new()
            } else {
                index.retrieve::<f64>(&query, settings.top_k)
            };
            if !hits.is_empty() {
                valid_search_calls += 1;
            }
            if seq.len() + 2 > settings.max_total_tokens {
                break 'episode Termination::MaxLen;
            }
            let room = settings.max_total_tokens - seq.len() - 2;
            let words =
                render_passages(vocab, &hits, settings.max_retrieved_tokens.min(room));
            seq.push(Special::InfoOpen.id(), Provenance::Injected);
            for tok in words {
                seq.push(tok, Provenance::Retrieved);
            }
            seq.push(Special::InfoClose.id(), Provenance::Injected);
            actions_taken += 1;
        } else if let Some((open, close)) =
            parse_tag_span(segment, Special::AnswerOpen.id(), Special::AnswerClose.id())
        {
            // Answer action: extract and stop.
            answer = Some(vocab.detokenize(&segment[open + 1..close]));
            break Termination::Answer;
        } else {
            // Malformed action: splice the rethink nudge.
            let room = settings.max_total_tokens - seq.len();
            if room == 0 {
                break Termination::MaxLen;
            }
            let mut words = vocab.tokenize(RETHINK_TEXT);
            words.truncate(room);
            for tok in words {
                seq.push(tok, Provenance::Injected);
            }
            actions_taken += 1;
        }
    };

    RolloutRecord {
        seq,
        behavior_log_probs,
        search_calls,
        valid_search_calls,
        answer,
        terminated_by,
    }
}
