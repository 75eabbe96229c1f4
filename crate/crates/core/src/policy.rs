//! Autoregressive token policy shared by the pointwise and pairwise models.
//!
//! Step logits are `z_t = A·ctx + B·c(o_<t)` where `c` is the token-count vector
//! of the prefix divided by the thought length.

use rand::Rng;

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PolicyView<'a> {
    pub vocab: usize,
    pub thought_len: usize,
    pub ctx_dim: usize,
    /// `V × ctx_dim`, row-major.
    pub context_weights: &'a [f64],
    /// `V × V`, row-major.
    pub history_weights: &'a [f64],
}

impl<'a> PolicyView<'a> {
    pub fn step_logits(&self, ctx: &[f64], counts: &[usize]) -> Vec<f64> {
        debug_assert_eq!(ctx.len(), self.ctx_dim);
        let inv_len = 1.0 / self.thought_len as f64;
        (0..self.vocab)
            .map(|k| {
                let a_row = &self.context_weights[k * self.ctx_dim..(k + 1) * self.ctx_dim];
                let b_row = &self.history_weights[k * self.vocab..(k + 1) * self.vocab];
                let from_ctx: f64 = a_row.iter().zip(ctx).map(|(a, x)| a * x).sum();
                let from_hist: f64 = b_row
                    .iter()
                    .zip(counts)
                    .map(|(b, &c)| b * (c as f64 * inv_len))
                    .sum();
                from_ctx + from_hist
            })
            .collect()
    }

    /// Per-step log-probabilities `log π(o_t | ctx, o_<t)`.
    pub fn token_logprobs(&self, ctx: &[f64], tokens: &[usize]) -> Vec<f64> {
        let mut counts = vec![0usize; self.vocab];
        tokens
            .iter()
            .map(|&tok| {
                let lp = log_softmax(&self.step_logits(ctx, &counts))[tok];
                counts[tok] += 1;
                lp
            })
            .collect()
    }

    /// Adds `Σ_t w_t ∇ log π(o_t | ctx, o_<t)` into the two weight-gradient blocks.
    pub fn accumulate_grad(
        &self,
        ctx: &[f64],
        tokens: &[usize],
        step_weights: &[f64],
        grad_context: &mut [f64],
        grad_history: &mut [f64],
    ) {
        let inv_len = 1.0 / self.thought_len as f64;
        let mut counts = vec![0usize; self.vocab];
        for (&tok, &w) in tokens.iter().zip(step_weights) {
            if w != 0.0 {
                let probs = softmax(&self.step_logits(ctx, &counts));
                for (k, p) in probs.iter().enumerate() {
                    let dz = w * (f64::from(u8::from(k == tok)) - p);
                    if dz == 0.0 {
                        continue;
                    }
                    let ga = &mut grad_context[k * self.ctx_dim..(k + 1) * self.ctx_dim];
                    for (g, x) in ga.iter_mut().zip(ctx) {
                        *g += dz * x;
                    }
                    let gb = &mut grad_history[k * self.vocab..(k + 1) * self.vocab];
                    for (g, &c) in gb.iter_mut().zip(&counts) {
                        if c > 0 {
                            *g += dz * c as f64 * inv_len;
                        }
                    }
                }
            }
            counts[tok] += 1;
        }
    }

    /// Ancestral sample; returns tokens and per-step log-probabilities.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: &[f64], rng: &mut R) -> (Vec<usize>, Vec<f64>) {
        let mut counts = vec![0usize; self.vocab];
        let mut tokens = Vec::with_capacity(self.thought_len);
        let mut logprobs = Vec::with_capacity(self.thought_len);
        for _ in 0..self.thought_len {
            let lps = log_softmax(&self.step_logits(ctx, &counts));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = self.vocab - 1;
            for (k, lp) in lps.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    tok = k;
                    break;
                }
            }
            tokens.push(tok);
            logprobs.push(lps[tok]);
            counts[tok] += 1;
        }
        (tokens, logprobs)
    }

    /// Argmax decoding, ties broken toward the lowest token id.
    pub fn greedy(&self, ctx: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let mut counts = vec![0usize; self.vocab];
        let mut tokens = Vec::with_capacity(self.thought_len);
        let mut logprobs = Vec::with_capacity(self.thought_len);
        for _ in 0..self.thought_len {
            let lps = log_softmax(&self.step_logits(ctx, &counts));
            let mut tok = 0;
            for (k, &lp) in lps.iter().enumerate() {
                if lp > lps[tok] {
                    tok = k;
                }
            }
            tokens.push(tok);
            logprobs.push(lps[tok]);
            counts[tok] += 1;
        }
        (tokens, logprobs)
    }

    /// Mean per-step entropy (nats) along a given trajectory.
    pub fn mean_step_entropy(&self, ctx: &[f64], tokens: &[usize]) -> f64 {
        let mut counts = vec![0usize; self.vocab];
        let mut total = 0.0;
        for &tok in tokens {
            let lps = log_softmax(&self.step_logits(ctx, &counts));
            total -= lps.iter().map(|lp| lp.exp() * lp).sum::<f64>();
            counts[tok] += 1;
        }
        total / tokens.len().max(1) as f64
    }
}

/// Fraction of each token in a thought, `g_k(o) = count_k / T`.
pub(crate) fn token_frequencies(tokens: &[usize], vocab: usize) -> Vec<f64> {
    let mut freq = vec![0.0; vocab];
    let inv = 1.0 / tokens.len() as f64;
    for &t in tokens {
        freq[t] += inv;
    }
    freq
}
