//! The enumerable generative preference model.
//!
//! A response is scored in two phases. First a thought `o` of fixed length `T`
//! is drawn from an autoregressive softmax policy conditioned on the response
//! features. Then a gated sigmoid head produces the answer probability
//! `π(a | ctx, o) = σ(θ₀ + Σ_k θ_k · g_k(o) · ctx[k])`, where `g_k(o)` is the
//! frequency of token `k` in the thought. The thought decides which signal
//! channels the head reads.
//!
//! Parameters live in one flat [`ParamVector`] laid out as
//! `[A (V×d) | B (V×V) | θ₀ | θ_0 … θ_{V-1}]`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{token_frequencies, PolicyView};
use crate::rng::SeedStream;

/// Floor applied to every probability before it enters a logarithm or ratio.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default upper bound on `V^T` for exhaustive thought enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 65_536;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Features of one (prompt, response) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

/// A sampled thought and its log-probability under the policy that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub tokens: Vec<usize>,
    /// `log π(o | ctx)` in nats.
    pub logprob: f64,
    /// Per-step terms of `logprob`.
    pub step_logprobs: Vec<f64>,
}

impl Thought {
    fn from_steps(tokens: Vec<usize>, step_logprobs: Vec<f64>) -> Self {
        let logprob = step_logprobs.iter().sum();
        Self {
            tokens,
            logprob,
            step_logprobs,
        }
    }
}

/// Flat parameter vector with the handful of linear-algebra helpers the
/// optimizers need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        Self(self.0.iter().map(|x| x * scale).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Fixed-order sum; the result is independent of how the inputs were produced.
    pub fn sum_all<'a, I>(len: usize, parts: I) -> ParamVector
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut total = Self::zeros(len);
        for p in parts {
            total.add_scaled(p, 1.0);
        }
        total
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Index map from the flat vector to the `(A, B, θ)` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub vocab: usize,
    pub thought_len: usize,
    pub dim: usize,
}

impl ParamLayout {
    pub fn param_count(&self) -> usize {
        self.vocab * self.dim + self.vocab * self.vocab + self.vocab + 1
    }

    pub fn context_block(&self) -> Range<usize> {
        0..self.vocab * self.dim
    }

    pub fn history_block(&self) -> Range<usize> {
        let start = self.vocab * self.dim;
        start..start + self.vocab * self.vocab
    }

    /// `θ₀` followed by one gate weight per token.
    pub fn head_block(&self) -> Range<usize> {
        let start = self.vocab * self.dim + self.vocab * self.vocab;
        start..start + self.vocab + 1
    }

    /// The thought-policy parameters `(A, B)`.
    pub fn policy_block(&self) -> Range<usize> {
        0..self.head_block().start
    }

    pub fn context_index(&self, token: usize, feature: usize) -> usize {
        token * self.dim + feature
    }

    pub fn history_index(&self, token: usize, prev: usize) -> usize {
        self.history_block().start + token * self.vocab + prev
    }

    pub fn head_bias_index(&self) -> usize {
        self.head_block().start
    }

    pub fn head_weight_index(&self, token: usize) -> usize {
        self.head_block().start + 1 + token
    }
}

/// Structured copy of the parameters, for inspection and round-trip checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredParams {
    pub context: Vec<Vec<f64>>,
    pub history: Vec<Vec<f64>>,
    pub head_bias: f64,
    pub head_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpmModel {
    layout: ParamLayout,
    params: ParamVector,
}

impl GpmModel {
    pub fn zeros(vocab: usize, thought_len: usize, dim: usize) -> Result<Self> {
        let layout = ParamLayout {
            vocab,
            thought_len,
            dim,
        };
        Self::from_params(layout, ParamVector::zeros(layout.param_count()))
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        vocab: usize,
        thought_len: usize,
        dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(vocab, thought_len, dim)?;
        for p in model.params.as_mut_slice() {
            *p = rng.gen_range(-scale..=scale);
        }
        Ok(model)
    }

    pub fn from_params(layout: ParamLayout, params: ParamVector) -> Result<Self> {
        if layout.vocab == 0 || layout.thought_len == 0 {
            return Err(Error::Config(
                "vocabulary size and thought length must be positive".into(),
            ));
        }
        if layout.dim < layout.vocab {
            return Err(Error::Config(format!(
                "feature dimension {} must cover the {} gated signal channels",
                layout.dim, layout.vocab
            )));
        }
        if params.len() != layout.param_count() {
            return Err(Error::DimensionMismatch {
                expected: layout.param_count(),
                actual: params.len(),
            });
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn vocab(&self) -> usize {
        self.layout.vocab
    }

    pub fn thought_len(&self) -> usize {
        self.layout.thought_len
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn with_params(&self, params: ParamVector) -> Self {
        assert_eq!(params.len(), self.param_count());
        Self {
            layout: self.layout,
            params,
        }
    }

    pub fn set_context_weight(&mut self, token: usize, feature: usize, value: f64) {
        let i = self.layout.context_index(token, feature);
        self.params[i] = value;
    }

    pub fn set_history_weight(&mut self, token: usize, prev: usize, value: f64) {
        let i = self.layout.history_index(token, prev);
        self.params[i] = value;
    }

    pub fn head_bias(&self) -> f64 {
        self.params[self.layout.head_bias_index()]
    }

    pub fn set_head_bias(&mut self, value: f64) {
        let i = self.layout.head_bias_index();
        self.params[i] = value;
    }

    pub fn head_weight(&self, token: usize) -> f64 {
        self.params[self.layout.head_weight_index(token)]
    }

    pub fn set_head_weight(&mut self, token: usize, value: f64) {
        let i = self.layout.head_weight_index(token);
        self.params[i] = value;
    }

    pub fn to_structured(&self) -> StructuredParams {
        let l = self.layout;
        let p = self.params.as_slice();
        StructuredParams {
            context: p[l.context_block()].chunks(l.dim).map(<[f64]>::to_vec).collect(),
            history: p[l.history_block()]
                .chunks(l.vocab)
                .map(<[f64]>::to_vec)
                .collect(),
            head_bias: p[l.head_bias_index()],
            head_weights: p[l.head_bias_index() + 1..l.head_block().end].to_vec(),
        }
    }

    pub fn from_structured(layout: ParamLayout, s: &StructuredParams) -> Result<Self> {
        let mut flat = Vec::with_capacity(layout.param_count());
        s.context.iter().for_each(|row| flat.extend_from_slice(row));
        s.history.iter().for_each(|row| flat.extend_from_slice(row));
        flat.push(s.head_bias);
        flat.extend_from_slice(&s.head_weights);
        Self::from_params(layout, ParamVector::from_vec(flat))
    }

    pub(crate) fn policy(&self) -> PolicyView<'_> {
        let p = self.params.as_slice();
        PolicyView {
            vocab: self.layout.vocab,
            thought_len: self.layout.thought_len,
            ctx_dim: self.layout.dim,
            context_weights: &p[self.layout.context_block()],
            history_weights: &p[self.layout.history_block()],
        }
    }

    pub fn check_ctx(&self, ctx: &FeatureVector) -> Result<()> {
        if ctx.dim() != self.layout.dim {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim,
                actual: ctx.dim(),
            });
        }
        Ok(())
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != self.layout.thought_len {
            return Err(Error::ThoughtLength {
                expected: self.layout.thought_len,
                actual: tokens.len(),
            });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t >= self.layout.vocab) {
            return Err(Error::InvalidToken {
                token,
                vocab: self.layout.vocab,
            });
        }
        Ok(())
    }

    /// Logits of the next thought token given a prefix.
    pub fn thought_step_logits(&self, ctx: &FeatureVector, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_ctx(ctx)?;
        if prefix.len() >= self.layout.thought_len {
            return Err(Error::PrefixTooLong {
                len: prefix.len(),
                thought_len: self.layout.thought_len,
            });
        }
        let mut counts = vec![0usize; self.layout.vocab];
        for &t in prefix {
            if t >= self.layout.vocab {
                return Err(Error::InvalidToken {
                    token: t,
                    vocab: self.layout.vocab,
                });
            }
            counts[t] += 1;
        }
        Ok(self.policy().step_logits(ctx.values(), &counts))
    }

    /// `log π(o | ctx)`.
    pub fn thought_logprob(&self, ctx: &FeatureVector, tokens: &[usize]) -> Result<f64> {
        self.check_ctx(ctx)?;
        self.check_tokens(tokens)?;
        Ok(self.policy().token_logprobs(ctx.values(), tokens).iter().sum())
    }

    /// Per-step `log π(o_t | ctx, o_<t)`; used for clipped ratios.
    pub fn token_logprobs(&self, ctx: &FeatureVector, tokens: &[usize]) -> Vec<f64> {
        self.policy().token_logprobs(ctx.values(), tokens)
    }

    /// Scores an externally supplied token sequence as a [`Thought`].
    pub fn thought(&self, ctx: &FeatureVector, tokens: Vec<usize>) -> Result<Thought> {
        self.check_ctx(ctx)?;
        self.check_tokens(&tokens)?;
        let steps = self.policy().token_logprobs(ctx.values(), &tokens);
        Ok(Thought::from_steps(tokens, steps))
    }

    /// `n` ancestral samples; thought `i` uses child stream `i` of `stream`.
    pub fn sample_thoughts(
        &self,
        ctx: &FeatureVector,
        n: usize,
        stream: &SeedStream,
    ) -> Result<Vec<Thought>> {
        self.check_ctx(ctx)?;
        if n == 0 {
            return Err(Error::EmptyGroup);
        }
        let policy = self.policy();
        Ok((0..n)
            .map(|i| {
                let mut rng = stream.child(i as u64).rng();
                let (tokens, steps) = policy.sample(ctx.values(), &mut rng);
                Thought::from_steps(tokens, steps)
            })
            .collect())
    }

    pub fn greedy_thought(&self, ctx: &FeatureVector) -> Thought {
        let (tokens, steps) = self.policy().greedy(ctx.values());
        Thought::from_steps(tokens, steps)
    }

    pub fn mean_step_entropy(&self, ctx: &FeatureVector, tokens: &[usize]) -> f64 {
        self.policy().mean_step_entropy(ctx.values(), tokens)
    }

    pub fn answer_logit(&self, ctx: &FeatureVector, tokens: &[usize]) -> f64 {
        let freq = token_frequencies(tokens, self.layout.vocab);
        let x = ctx.values();
        self.head_bias()
            + freq
                .iter()
                .enumerate()
                .map(|(k, g)| self.head_weight(k) * g * x[k])
                .sum::<f64>()
    }

    /// `π(a | ctx, o)`, clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]`.
    pub fn answer_prob(&self, ctx: &FeatureVector, tokens: &[usize]) -> f64 {
        clamp_prob(sigmoid(self.answer_logit(ctx, tokens)))
    }

    /// `log π(a | ctx, o)` of the clamped probability.
    pub fn log_answer_prob(&self, ctx: &FeatureVector, tokens: &[usize]) -> f64 {
        self.answer_prob(ctx, tokens).ln()
    }

    /// `∇_φ log π(o | ctx)`; the head block is zero.
    pub fn grad_log_thought_prob(&self, ctx: &FeatureVector, tokens: &[usize]) -> ParamVector {
        let ones = vec![1.0; tokens.len()];
        self.grad_weighted_token_logprobs(ctx, tokens, &ones)
    }

    /// `Σ_t w_t ∇_φ log π(o_t | ctx, o_<t)`.
    pub fn grad_weighted_token_logprobs(
        &self,
        ctx: &FeatureVector,
        tokens: &[usize],
        step_weights: &[f64],
    ) -> ParamVector {
        let mut grad = ParamVector::zeros(self.param_count());
        let (ctx_block, hist_block) = (self.layout.context_block(), self.layout.history_block());
        let g = grad.as_mut_slice();
        let (ga, rest) = g.split_at_mut(ctx_block.end);
        let gb = &mut rest[..hist_block.len()];
        self.policy()
            .accumulate_grad(ctx.values(), tokens, step_weights, ga, gb);
        grad
    }

    /// `∇_φ log π(a | ctx, o)`; the policy blocks are zero.
    pub fn grad_log_answer_prob(&self, ctx: &FeatureVector, tokens: &[usize]) -> ParamVector {
        let mut grad = ParamVector::zeros(self.param_count());
        self.add_grad_log_answer_prob(ctx, tokens, 1.0, &mut grad);
        grad
    }

    pub(crate) fn add_grad_log_answer_prob(
        &self,
        ctx: &FeatureVector,
        tokens: &[usize],
        scale: f64,
        grad: &mut ParamVector,
    ) {
        let p = sigmoid(self.answer_logit(ctx, tokens));
        if p != clamp_prob(p) {
            return;
        }
        let coeff = scale * (1.0 - p);
        let freq = token_frequencies(tokens, self.layout.vocab);
        let x = ctx.values();
        grad[self.layout.head_bias_index()] += coeff;
        for (k, g) in freq.iter().enumerate() {
            if *g != 0.0 {
                grad[self.layout.head_weight_index(k)] += coeff * g * x[k];
            }
        }
    }

    /// `∇_φ log(1 - π(a | ctx, o))`.
    pub(crate) fn add_grad_log_reject_prob(
        &self,
        ctx: &FeatureVector,
        tokens: &[usize],
        scale: f64,
        grad: &mut ParamVector,
    ) {
        let p = sigmoid(self.answer_logit(ctx, tokens));
        if p != clamp_prob(p) {
            return;
        }
        let coeff = -scale * p;
        let freq = token_frequencies(tokens, self.layout.vocab);
        let x = ctx.values();
        grad[self.layout.head_bias_index()] += coeff;
        for (k, g) in freq.iter().enumerate() {
            if *g != 0.0 {
                grad[self.layout.head_weight_index(k)] += coeff * g * x[k];
            }
        }
    }
}

/// All `V^T` token sequences in lexicographic order.
pub fn enumerate_thoughts(vocab: usize, thought_len: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let too_big = || Error::EnumerationCap {
        vocab,
        thought_len,
        cap,
    };
    let total = u32::try_from(thought_len)
        .ok()
        .and_then(|t| vocab.checked_pow(t))
        .ok_or_else(too_big)?;
    if total > cap {
        return Err(too_big());
    }
    Ok((0..total)
        .map(|mut idx| {
            let mut seq = vec![0; thought_len];
            for slot in seq.iter_mut().rev() {
                *slot = idx % vocab;
                idx /= vocab;
            }
            seq
        })
        .collect())
}
