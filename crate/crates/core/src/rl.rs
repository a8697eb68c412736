//! Advantage estimation and policy-gradient losses.
//!
//! Two trainers share one clipped-surrogate core: the value-based variant
//! pairs it with generalized advantage estimation and a value head, the
//! group-relative variant normalizes outcome rewards within groups of
//! rollouts for the same question. Both optimize only the positions selected
//! by the provenance mask, normalize per sequence by the number of optimized
//! tokens, then average over the batch, and both regularize with an exact
//! full-vocabulary KL to a frozen reference policy.
//!
//! All gradients are exact and hand-derived; the tests check every one of
//! them against central finite differences.

use serde::{Deserialize, Serialize};

use crate::model::{context_window, log_softmax, PolicyParams, TokenMlp, ValueParams};
use crate::rollout::{Provenance, RolloutRecord, TaggedSequence};
use crate::scalar::{count, real, Scalar};
use crate::vocab::TokenId;

/// Loss-semantics knobs shared by both methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Discount for advantage estimation.
    pub gamma: f64,
    /// GAE mixing parameter.
    pub lambda: f64,
    /// Clip radius for the importance ratio.
    pub clip_eps: f64,
    /// Weight of the KL-to-reference penalty.
    pub kl_beta: f64,
    /// Rollouts per question in group-relative training.
    pub group_size: usize,
    /// Weight of the value MSE term.
    pub value_coef: f64,
    /// Optimize only generated tokens (true) or everything after the prompt
    /// (false, the ablation arm).
    pub mask_retrieved: bool,
    /// Divide group-centered rewards by the group std (true) or leave them
    /// merely centered (false).
    pub grpo_std_normalize: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 1.0,
            lambda: 1.0,
            clip_eps: 0.2,
            kl_beta: 0.001,
            group_size: 5,
            value_coef: 0.5,
            mask_retrieved: true,
            grpo_std_normalize: true,
        }
    }
}

/// Advantages and value-regression targets aligned to one step list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet<S> {
    pub advantages: Vec<S>,
    pub value_targets: Vec<S>,
}

/// Generalized advantage estimation over one episode's optimized steps.
///
/// `rewards[t]` is the reward observed after step `t`, `values[t]` the value
/// estimate at step `t`; the episode is terminal after the last step, so the
/// bootstrap value is zero. Value targets are `advantage + value`.
pub fn gae<S: Scalar>(rewards: &[S], values: &[S], gamma: f64, lambda: f64) -> AdvantageSet<S> {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    let g = real::<S>(gamma);
    let gl = real::<S>(gamma * lambda);
    let n = rewards.len();
    let mut advantages = vec![S::zero(); n];
    let mut acc = S::zero();
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { S::zero() };
        let delta = rewards[t] + g * next_value - values[t];
        acc = delta + gl * acc;
        advantages[t] = acc;
    }
    let value_targets = advantages.iter().zip(values).map(|(&a, &v)| a + v).collect();
    AdvantageSet { advantages, value_targets }
}

/// Group-relative advantages for one group of outcome rewards.
///
/// A group of one is plain REINFORCE: the raw reward comes back unchanged.
/// Larger groups are centered on the group mean and, when `std_normalize`
/// is set, divided by the population standard deviation plus `1e-8`, so a
/// degenerate all-equal group yields zero advantages instead of a blow-up.
pub fn grpo_advantages<S: Scalar>(rewards: &[S], std_normalize: bool) -> Vec<S> {
    let n = rewards.len();
    if n <= 1 {
        return rewards.to_vec();
    }
    let count_n = count::<S>(n);
    let mean = rewards.iter().copied().sum::<S>() / count_n;
    let centered: Vec<S> = rewards.iter().map(|&r| r - mean).collect();
    if !std_normalize {
        return centered;
    }
    let var = centered.iter().map(|&c| c * c).sum::<S>() / count_n;
    let denom = var.sqrt() + real::<S>(1e-8);
    centered.into_iter().map(|c| c / denom).collect()
}

/// Exact KL divergence `KL(policy || reference)` over the full vocabulary at
/// one context.
pub fn kl_exact<S: Scalar>(
    policy: &PolicyParams<S>,
    reference: &PolicyParams<S>,
    ctx: &[TokenId],
) -> S {
    let lp = log_softmax(&policy.logits(ctx));
    let lq = log_softmax(&reference.logits(ctx));
    lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum()
}

/// Positions a loss optimizes: generated tokens, or everything after the
/// prompt when retrieved-token masking is switched off.
pub fn optimized_positions(seq: &TaggedSequence, mask_retrieved: bool) -> Vec<usize> {
    seq.provenance
        .iter()
        .enumerate()
        .filter(|(_, &p)| {
            p == Provenance::Generated || (!mask_retrieved && p != Provenance::Prompt)
        })
        .map(|(i, _)| i)
        .collect()
}

/// One sequence of a loss batch. All per-token arrays span the full sequence
/// and are read only at optimized positions, which is what makes the masking
/// laws literally testable: entries at masked-out positions are never
/// touched.
#[derive(Debug, Clone, Copy)]
pub struct SequenceExample<'a, S> {
    pub seq: &'a TaggedSequence,
    pub old_log_probs: &'a [S],
    pub advantages: &'a [S],
    /// Used by the value head only; may be empty when no value head exists.
    pub value_targets: &'a [S],
}

/// Frozen behavior policy plus its full-length per-token log-probs for a
/// collected batch.
#[derive(Debug, Clone)]
pub struct BehaviorSnapshot<S> {
    pub params: PolicyParams<S>,
    pub old_log_probs: Vec<Vec<S>>,
}

impl<S: Scalar> BehaviorSnapshot<S> {
    /// Scatters each record's behavior log-probs to full sequence length.
    /// When `mask_retrieved` is off the snapshot policy is also evaluated at
    /// retrieved and injected positions, since the loss will read them.
    pub fn collect(params: PolicyParams<S>, records: &[RolloutRecord<S>], mask_retrieved: bool) -> Self {
        let k = params.ctx_len();
        let mut old_log_probs = Vec::with_capacity(records.len());
        for rec in records {
            let mut lps = vec![S::zero(); rec.seq.len()];
            let mut gen_iter = rec.behavior_log_probs.iter();
            for (i, &prov) in rec.seq.provenance.iter().enumerate() {
                match prov {
                    Provenance::Generated => {
                        lps[i] = *gen_iter.next().expect("one log-prob per generated token");
                    }
                    Provenance::Retrieved | Provenance::Injected if !mask_retrieved => {
                        let ctx = context_window(&rec.seq.tokens[..i], k);
                        lps[i] = params.log_prob(&ctx, rec.seq.tokens[i]);
                    }
                    _ => {}
                }
            }
            old_log_probs.push(lps);
        }
        BehaviorSnapshot { params, old_log_probs }
    }
}

/// Everything a loss evaluation reports.
#[derive(Debug, Clone)]
pub struct LossOutput<S> {
    /// Scalar being minimized.
    pub loss: S,
    /// Negated clipped surrogate, before KL and value terms.
    pub surrogate_loss: S,
    /// Mean squared error of the value head (unweighted); zero without one.
    pub value_loss: S,
    /// Masked mean KL to the reference policy.
    pub mean_kl: S,
    /// Sequences that actually contributed (nonempty optimized-position
    /// sets); exposes the batch-mean denominator so gradient accumulation
    /// over slices can reweight exactly.
    pub effective_sequences: usize,
    pub policy_grad: TokenMlp<S>,
    pub value_grad: Option<TokenMlp<S>>,
}

struct SurrogateTerms<S> {
    surr: S,
    /// d surrogate / d new-log-prob (zero on the clipped branch).
    d_lp: S,
}

/// Clipped importance-weighted advantage and its log-prob derivative.
fn clipped_surrogate<S: Scalar>(lp_new: S, lp_old: S, advantage: S, clip_eps: S) -> SurrogateTerms<S> {
    let ratio = (lp_new - lp_old).exp();
    let clipped = ratio.max(S::one() - clip_eps).min(S::one() + clip_eps);
    let unclipped_term = ratio * advantage;
    let clipped_term = clipped * advantage;
    if unclipped_term <= clipped_term {
        SurrogateTerms { surr: unclipped_term, d_lp: ratio * advantage }
    } else {
        SurrogateTerms { surr: clipped_term, d_lp: S::zero() }
    }
}

/// Shared per-batch core: walks each sequence's optimized positions,
/// accumulating the surrogate, the KL penalty, and (when a value head is
/// given) the value MSE, together with exact parameter gradients.
fn clipped_loss_core<S: Scalar>(
    policy: &PolicyParams<S>,
    value: Option<&ValueParams<S>>,
    reference: &PolicyParams<S>,
    batch: &[SequenceExample<'_, S>],
    hp: &HyperParams,
) -> LossOutput<S> {
    let k = policy.ctx_len();
    let clip_eps = real::<S>(hp.clip_eps);
    let kl_beta = real::<S>(hp.kl_beta);
    let value_coef = real::<S>(hp.value_coef);

    let positions: Vec<Vec<usize>> =
        batch.iter().map(|ex| optimized_positions(ex.seq, hp.mask_retrieved)).collect();
    let effective = positions.iter().filter(|p| !p.is_empty()).count();
    let mut out = LossOutput {
        loss: S::zero(),
        surrogate_loss: S::zero(),
        value_loss: S::zero(),
        mean_kl: S::zero(),
        effective_sequences: effective,
        policy_grad: policy.net.zeros_like(),
        value_grad: value.map(|v| v.net.zeros_like()),
    };
    if effective == 0 {
        return out;
    }
    let batch_norm = S::one() / count::<S>(effective);

    let mut surr_total = S::zero();
    let mut kl_total = S::zero();
    let mut mse_total = S::zero();

    for (ex, pos) in batch.iter().zip(&positions) {
        if pos.is_empty() {
            continue;
        }
        debug_assert_eq!(ex.old_log_probs.len(), ex.seq.len());
        debug_assert_eq!(ex.advantages.len(), ex.seq.len());
        let seq_norm = S::one() / count::<S>(pos.len());
        let weight = batch_norm * seq_norm;
        let mut surr_seq = S::zero();
        let mut kl_seq = S::zero();
        let mut mse_seq = S::zero();

        for &i in pos {
            let tok = ex.seq.tokens[i] as usize;
            let ctx = context_window(&ex.seq.tokens[..i], k);
            let trace = policy.net.forward(&ctx);
            let lp = log_softmax(&trace.output);
            let lq = log_softmax(&reference.logits(&ctx));
            let probs: Vec<S> = lp.iter().map(|&l| l.exp()).collect();

            let terms = clipped_surrogate(lp[tok], ex.old_log_probs[i], ex.advantages[i], clip_eps);
            surr_seq += terms.surr;
            let kl: S = probs.iter().zip(lp.iter().zip(&lq)).map(|(&p, (&a, &b))| p * (a - b)).sum();
            kl_seq += kl;

            // d loss / d logits, combining both policy terms:
            //   surrogate: -(w) * d_lp * (onehot - p)
            //   KL penalty: +(w * beta) * p .* (lp - lq - kl)
            let surr_coeff = -weight * terms.d_lp;
            let kl_coeff = weight * kl_beta;
            let mut d_logits: Vec<S> = Vec::with_capacity(probs.len());
            for v in 0..probs.len() {
                let onehot = if v == tok { S::one() } else { S::zero() };
                let d_surr = surr_coeff * (onehot - probs[v]);
                let d_kl = kl_coeff * probs[v] * (lp[v] - lq[v] - kl);
                d_logits.push(d_surr + d_kl);
            }
            policy.net.backward(&ctx, &trace, &d_logits, &mut out.policy_grad);

            if let (Some(vp), Some(vg)) = (value, out.value_grad.as_mut()) {
                let vtrace = vp.net.forward(&ctx);
                let err = vtrace.output[0] - ex.value_targets[i];
                mse_seq += err * err;
                let d_v = weight * value_coef * (err + err);
                vp.net.backward(&ctx, &vtrace, &[d_v], vg);
            }
        }
        surr_total += surr_seq * seq_norm;
        kl_total += kl_seq * seq_norm;
        mse_total += mse_seq * seq_norm;
    }

    out.surrogate_loss = -surr_total * batch_norm;
    out.mean_kl = kl_total * batch_norm;
    out.value_loss = mse_total * batch_norm;
    out.loss = out.surrogate_loss + kl_beta * out.mean_kl + value_coef * out.value_loss;
    if value.is_none() {
        out.loss = out.surrogate_loss + kl_beta * out.mean_kl;
    }
    out
}

/// Clipped-surrogate loss with a value head: per-sequence mean over optimized
/// tokens, batch mean over sequences, plus `kl_beta` x masked mean KL and
/// `value_coef` x value MSE. Returns exact gradients for both networks.
pub fn ppo_loss<S: Scalar>(
    policy: &PolicyParams<S>,
    value: &ValueParams<S>,
    reference: &PolicyParams<S>,
    batch: &[SequenceExample<'_, S>],
    hp: &HyperParams,
) -> LossOutput<S> {
    clipped_loss_core(policy, Some(value), reference, batch, hp)
}

/// Group-relative loss: the same clipped surrogate driven by group-normalized
/// outcome advantages (already broadcast into each example), no value head,
/// KL penalty subtracted from the objective with weight `kl_beta`.
pub fn grpo_loss<S: Scalar>(
    policy: &PolicyParams<S>,
    reference: &PolicyParams<S>,
    batch: &[SequenceExample<'_, S>],
    hp: &HyperParams,
) -> LossOutput<S> {
    clipped_loss_core(policy, None, reference, batch, hp)
}
