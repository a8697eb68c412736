//! Policy and value networks.
//!
//! Both heads share one architecture: embed the last `ctx` token ids, run the
//! concatenated embeddings through a single tanh layer, and project to an
//! output vector (vocabulary logits for the policy, one scalar for the
//! value). Gradients are computed by hand-written backprop; the optimizer is
//! Adam with bias correction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{count, real, Scalar};
use crate::vocab::{Special, TokenId};

/// Fixed-length window of the most recent token ids, oldest first.
pub type Context = Vec<TokenId>;

/// Last `k` tokens of `tokens`, left-padded with `<pad>` when shorter.
pub fn context_window(tokens: &[TokenId], k: usize) -> Context {
    let mut ctx = vec![Special::Pad.id(); k];
    let take = tokens.len().min(k);
    ctx[k - take..].copy_from_slice(&tokens[tokens.len() - take..]);
    ctx
}

/// Layer sizes for a [`TokenMlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    pub vocab: usize,
    pub ctx: usize,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub out: usize,
}

impl MlpDims {
    pub fn n_params(&self) -> usize {
        self.vocab * self.d_emb
            + self.ctx * self.d_emb * self.d_hidden
            + self.d_hidden
            + self.d_hidden * self.out
            + self.out
    }
}

/// One-hidden-layer token network. The same struct doubles as its own
/// gradient container (same shapes, block for block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMlp<S> {
    pub dims: MlpDims,
    /// vocab x d_emb, row per token id.
    pub embedding: Vec<S>,
    /// (ctx * d_emb) x d_hidden, row per input coordinate.
    pub hidden_w: Vec<S>,
    pub hidden_b: Vec<S>,
    /// d_hidden x out, row per hidden unit.
    pub out_w: Vec<S>,
    pub out_b: Vec<S>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pub input: Vec<S>,
    pub hidden: Vec<S>,
    pub output: Vec<S>,
}

impl<S: Scalar> TokenMlp<S> {
    pub fn zeros(dims: MlpDims) -> TokenMlp<S> {
        TokenMlp {
            dims,
            embedding: vec![S::zero(); dims.vocab * dims.d_emb],
            hidden_w: vec![S::zero(); dims.ctx * dims.d_emb * dims.d_hidden],
            hidden_b: vec![S::zero(); dims.d_hidden],
            out_w: vec![S::zero(); dims.d_hidden * dims.out],
            out_b: vec![S::zero(); dims.out],
        }
    }

    /// All weights drawn uniformly from `[-scale, scale]`. Draws are made in
    /// `f64` so the stream is identical for every scalar type.
    pub fn init<R: Rng>(dims: MlpDims, scale: f64, rng: &mut R) -> TokenMlp<S> {
        let mut net = TokenMlp::zeros(dims);
        for block in net.blocks_mut() {
            for w in block {
                *w = real::<S>((rng.gen::<f64>() * 2.0 - 1.0) * scale);
            }
        }
        net
    }

    pub fn zeros_like(&self) -> TokenMlp<S> {
        TokenMlp::zeros(self.dims)
    }

    fn blocks(&self) -> [&[S]; 5] {
        [&self.embedding, &self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b]
    }

    fn blocks_mut(&mut self) -> [&mut [S]; 5] {
        [
            &mut self.embedding,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.dims.n_params()
    }

    /// Flat read access across all blocks, in declaration order.
    pub fn get_flat(&self, mut i: usize) -> S {
        for block in self.blocks() {
            if i < block.len() {
                return block[i];
            }
            i -= block.len();
        }
        panic!("flat index out of range");
    }

    /// Flat write access across all blocks, in declaration order.
    pub fn set_flat(&mut self, mut i: usize, value: S) {
        for block in self.blocks_mut() {
            if i < block.len() {
                block[i] = value;
                return;
            }
            i -= block.len();
        }
        panic!("flat index out of range");
    }

    /// `self += rhs * factor`, block for block.
    pub fn add_scaled(&mut self, rhs: &TokenMlp<S>, factor: S) {
        debug_assert_eq!(self.dims, rhs.dims);
        for (dst, src) in self.blocks_mut().into_iter().zip(rhs.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s * factor;
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for block in self.blocks_mut() {
            for w in block {
                *w *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().into_iter().all(|b| b.iter().all(|w| w.is_finite()))
    }

    pub fn forward(&self, ctx: &[TokenId]) -> ForwardTrace<S> {
        let d = self.dims;
        debug_assert_eq!(ctx.len(), d.ctx);
        let mut input = Vec::with_capacity(d.ctx * d.d_emb);
        for &tok in ctx {
            let row = tok as usize * d.d_emb;
            input.extend_from_slice(&self.embedding[row..row + d.d_emb]);
        }
        let mut hidden = self.hidden_b.clone();
        for (i, &x) in input.iter().enumerate() {
            if x != S::zero() {
                let row = i * d.d_hidden;
                for (j, h) in hidden.iter_mut().enumerate() {
                    *h += x * self.hidden_w[row + j];
                }
            }
        }
        for h in hidden.iter_mut() {
            *h = h.tanh();
        }
        let mut output = self.out_b.clone();
        for (j, &h) in hidden.iter().enumerate() {
            let row = j * d.out;
            for (o, out) in output.iter_mut().enumerate() {
                *out += h * self.out_w[row + o];
            }
        }
        ForwardTrace { input, hidden, output }
    }

    /// Accumulates `dL/dparams` into `grad`, given `dL/doutput` and the trace
    /// from the forward pass over the same context.
    pub fn backward(&self, ctx: &[TokenId], trace: &ForwardTrace<S>, d_out: &[S], grad: &mut TokenMlp<S>) {
        let d = self.dims;
        debug_assert_eq!(d_out.len(), d.out);
        for (o, &g) in d_out.iter().enumerate() {
            grad.out_b[o] += g;
        }
        let mut d_hidden = vec![S::zero(); d.d_hidden];
        for (j, &h) in trace.hidden.iter().enumerate() {
            let row = j * d.out;
            let mut acc = S::zero();
            for (o, &g) in d_out.iter().enumerate() {
                grad.out_w[row + o] += h * g;
                acc += self.out_w[row + o] * g;
            }
            d_hidden[j] = acc * (S::one() - h * h); // tanh'
        }
        for (j, &g) in d_hidden.iter().enumerate() {
            grad.hidden_b[j] += g;
        }
        for (i, &x) in trace.input.iter().enumerate() {
            let row = i * d.d_hidden;
            let mut d_x = S::zero();
            for (j, &g) in d_hidden.iter().enumerate() {
                grad.hidden_w[row + j] += x * g;
                d_x += self.hidden_w[row + j] * g;
            }
            let slot = i / d.d_emb;
            let offset = i % d.d_emb;
            grad.embedding[ctx[slot] as usize * d.d_emb + offset] += d_x;
        }
    }
}

/// Log-softmax with max subtraction; returns the full log-probability vector.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Softmax via [`log_softmax`].
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    log_softmax(logits).into_iter().map(|lp| lp.exp()).collect()
}

/// Autoregressive policy head: logits over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams<S> {
    pub net: TokenMlp<S>,
}

impl<S: Scalar> PolicyParams<S> {
    pub fn init<R: Rng>(vocab: usize, ctx: usize, d_emb: usize, d_hidden: usize, scale: f64, rng: &mut R) -> Self {
        let dims = MlpDims { vocab, ctx, d_emb, d_hidden, out: vocab };
        PolicyParams { net: TokenMlp::init(dims, scale, rng) }
    }

    #[inline]
    pub fn ctx_len(&self) -> usize {
        self.net.dims.ctx
    }

    pub fn logits(&self, ctx: &[TokenId]) -> Vec<S> {
        self.net.forward(ctx).output
    }

    /// Log-probability of `tok` given `ctx`.
    pub fn log_prob(&self, ctx: &[TokenId], tok: TokenId) -> S {
        log_softmax(&self.logits(ctx))[tok as usize]
    }

    /// Log-probability and its exact parameter gradient.
    pub fn grad_log_prob(&self, ctx: &[TokenId], tok: TokenId) -> (S, TokenMlp<S>) {
        let trace = self.net.forward(ctx);
        let log_probs = log_softmax(&trace.output);
        let lp = log_probs[tok as usize];
        // d log p(tok) / d logit_i = 1[i == tok] - p_i
        let mut d_out: Vec<S> = log_probs.iter().map(|&l| -l.exp()).collect();
        d_out[tok as usize] += S::one();
        let mut grad = self.net.zeros_like();
        self.net.backward(ctx, &trace, &d_out, &mut grad);
        (lp, grad)
    }

    /// Samples the next token.
    ///
    /// `temperature == 0` is greedy argmax (lowest id wins ties). `top_p < 1`
    /// applies nucleus filtering to the tempered distribution: tokens are
    /// ordered by descending probability (ties by ascending id) and the
    /// smallest prefix with mass `>= top_p` is kept and renormalized.
    ///
    /// The returned log-probability is always measured under the untempered
    /// policy, which is what the importance ratios in the losses expect.
    pub fn sample<R: Rng>(
        &self,
        ctx: &[TokenId],
        temperature: f64,
        top_p: f64,
        rng: &mut R,
    ) -> (TokenId, S) {
        let logits = self.logits(ctx);
        let raw_lp = log_softmax(&logits);
        if temperature == 0.0 {
            let mut best = 0usize;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            return (best as TokenId, raw_lp[best]);
        }
        let t = real::<S>(temperature);
        let tempered: Vec<S> = logits.iter().map(|&z| z / t).collect();
        let probs = softmax(&tempered);
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).expect("finite probs").then(a.cmp(&b)));
        let mut kept = probs.len();
        if top_p < 1.0 {
            let target = real::<S>(top_p);
            let mut mass = S::zero();
            for (rank, &i) in order.iter().enumerate() {
                mass += probs[i];
                if mass >= target {
                    kept = rank + 1;
                    break;
                }
            }
        }
        let mass: S = order[..kept].iter().map(|&i| probs[i]).sum();
        let u = real::<S>(rng.gen::<f64>()) * mass;
        let mut cum = S::zero();
        let mut chosen = order[kept - 1];
        for &i in &order[..kept] {
            cum += probs[i];
            if u < cum {
                chosen = i;
                break;
            }
        }
        (chosen as TokenId, raw_lp[chosen])
    }
}

/// Scalar state-value head over the same architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams<S> {
    pub net: TokenMlp<S>,
}

impl<S: Scalar> ValueParams<S> {
    pub fn init<R: Rng>(vocab: usize, ctx: usize, d_emb: usize, d_hidden: usize, scale: f64, rng: &mut R) -> Self {
        let dims = MlpDims { vocab, ctx, d_emb, d_hidden, out: 1 };
        ValueParams { net: TokenMlp::init(dims, scale, rng) }
    }

    pub fn value(&self, ctx: &[TokenId]) -> S {
        self.net.forward(ctx).output[0]
    }

    /// Value and its exact parameter gradient.
    pub fn grad_value(&self, ctx: &[TokenId]) -> (S, TokenMlp<S>) {
        let trace = self.net.forward(ctx);
        let v = trace.output[0];
        let mut grad = self.net.zeros_like();
        self.net.backward(ctx, &trace, &[S::one()], &mut grad);
        (v, grad)
    }
}

/// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<S> {
    pub m: TokenMlp<S>,
    pub v: TokenMlp<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(shape: &TokenMlp<S>) -> AdamState<S> {
        AdamState { m: shape.zeros_like(), v: shape.zeros_like(), t: 0 }
    }

    /// One descent step on `params` along `grad` with learning rate `lr`.
    pub fn step(&mut self, params: &mut TokenMlp<S>, grad: &TokenMlp<S>, lr: S) {
        let beta1 = real::<S>(0.9);
        let beta2 = real::<S>(0.999);
        let eps = real::<S>(1e-8);
        self.t += 1;
        let t = count::<S>(self.t as usize);
        let bc1 = S::one() - beta1.powf(t);
        let bc2 = S::one() - beta2.powf(t);
        let m_blocks = self.m.blocks_mut();
        let v_blocks = self.v.blocks_mut();
        let p_blocks = params.blocks_mut();
        let g_blocks = grad.blocks();
        for (((mb, vb), pb), gb) in m_blocks.into_iter().zip(v_blocks).zip(p_blocks).zip(g_blocks) {
            for (((m, v), p), &g) in mb.iter_mut().zip(vb.iter_mut()).zip(pb.iter_mut()).zip(gb) {
                *m = beta1 * *m + (S::one() - beta1) * g;
                *v = beta2 * *v + (S::one() - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
