//! Pairwise judge used by the pairwise GRPO baseline.
//!
//! The judge reads both responses at once: the thought policy sees the
//! concatenation `[ctx_first ; ctx_second]`, and the verdict is a two-way
//! softmax over gated scores of the two responses. Its parameters are not tied
//! across positions, so the judge can develop an order bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Verdict;
use crate::model::{clamp_prob, sigmoid, FeatureVector, ParamVector, Thought};
use crate::policy::{token_frequencies, PolicyView};
use crate::rng::SeedStream;

/// One sampled judgement: a thought followed by a verdict token.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRollout {
    pub thought: Thought,
    pub verdict: Verdict,
    /// `log π(verdict | first, second, o)`.
    pub verdict_logprob: f64,
}

/// `[A (V×2d) | B (V×V) | bias | w_first (V) | w_second (V)]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseGpm {
    vocab: usize,
    thought_len: usize,
    dim: usize,
    params: ParamVector,
}

impl PairwiseGpm {
    pub fn zeros(vocab: usize, thought_len: usize, dim: usize) -> Result<Self> {
        if vocab == 0 || thought_len == 0 || dim < vocab {
            return Err(Error::Config(format!(
                "invalid pairwise judge shape V={vocab} T={thought_len} d={dim}"
            )));
        }
        let count = Self::count(vocab, dim);
        Ok(Self {
            vocab,
            thought_len,
            dim,
            params: ParamVector::zeros(count),
        })
    }

    fn count(vocab: usize, dim: usize) -> usize {
        2 * vocab * dim + vocab * vocab + 2 * vocab + 1
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn thought_len(&self) -> usize {
        self.thought_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
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
            params,
            ..self.clone()
        }
    }

    fn ctx_dim(&self) -> usize {
        2 * self.dim
    }

    fn history_start(&self) -> usize {
        self.vocab * self.ctx_dim()
    }

    fn bias_index(&self) -> usize {
        self.history_start() + self.vocab * self.vocab
    }

    fn first_weight_index(&self, k: usize) -> usize {
        self.bias_index() + 1 + k
    }

    fn second_weight_index(&self, k: usize) -> usize {
        self.bias_index() + 1 + self.vocab + k
    }

    /// Index range of the verdict head.
    pub fn head_block(&self) -> std::ops::Range<usize> {
        self.bias_index()..self.param_count()
    }

    pub fn set_bias(&mut self, value: f64) {
        let i = self.bias_index();
        self.params[i] = value;
    }

    pub fn set_first_weight(&mut self, k: usize, value: f64) {
        let i = self.first_weight_index(k);
        self.params[i] = value;
    }

    pub fn set_second_weight(&mut self, k: usize, value: f64) {
        let i = self.second_weight_index(k);
        self.params[i] = value;
    }

    fn policy(&self) -> PolicyView<'_> {
        let p = self.params.as_slice();
        PolicyView {
            vocab: self.vocab,
            thought_len: self.thought_len,
            ctx_dim: self.ctx_dim(),
            context_weights: &p[..self.history_start()],
            history_weights: &p[self.history_start()..self.bias_index()],
        }
    }

    pub fn joint_context(&self, first: &FeatureVector, second: &FeatureVector) -> Result<Vec<f64>> {
        for c in [first, second] {
            if c.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: c.dim(),
                });
            }
        }
        let mut joint = first.values().to_vec();
        joint.extend_from_slice(second.values());
        Ok(joint)
    }

    fn verdict_logit(&self, joint: &[f64], tokens: &[usize]) -> f64 {
        let freq = token_frequencies(tokens, self.vocab);
        let (first, second) = joint.split_at(self.dim);
        let p = self.params.as_slice();
        p[self.bias_index()]
            + freq
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    g * (p[self.first_weight_index(k)] * first[k]
                        - p[self.second_weight_index(k)] * second[k])
                })
                .sum::<f64>()
    }

    /// Probability that the first-presented response is judged better.
    pub fn prob_first(&self, joint: &[f64], tokens: &[usize]) -> f64 {
        clamp_prob(sigmoid(self.verdict_logit(joint, tokens)))
    }

    pub fn verdict_logprob(&self, joint: &[f64], tokens: &[usize], verdict: Verdict) -> f64 {
        let p = self.prob_first(joint, tokens);
        match verdict {
            Verdict::A => p.ln(),
            Verdict::B => (1.0 - p).ln(),
        }
    }

    pub fn token_logprobs(&self, joint: &[f64], tokens: &[usize]) -> Vec<f64> {
        self.policy().token_logprobs(joint, tokens)
    }

    pub fn greedy_thought(&self, joint: &[f64]) -> Vec<usize> {
        self.policy().greedy(joint).0
    }

    pub fn sample(&self, joint: &[f64], n: usize, stream: &SeedStream) -> Vec<JudgeRollout> {
        let policy = self.policy();
        (0..n)
            .map(|i| {
                let mut rng = stream.child(i as u64).rng();
                let (tokens, steps) = policy.sample(joint, &mut rng);
                let p_first = self.prob_first(joint, &tokens);
                let verdict = if rng.gen::<f64>() < p_first {
                    Verdict::A
                } else {
                    Verdict::B
                };
                let logprob = steps.iter().sum();
                JudgeRollout {
                    verdict_logprob: self.verdict_logprob(joint, &tokens, verdict),
                    thought: Thought {
                        tokens,
                        logprob,
                        step_logprobs: steps,
                    },
                    verdict,
                }
            })
            .collect()
    }

    /// `Σ_t w_t ∇ log π(o_t) + w_v ∇ log π(verdict | o)`.
    pub fn grad_weighted_logprobs(
        &self,
        joint: &[f64],
        tokens: &[usize],
        step_weights: &[f64],
        verdict: Verdict,
        verdict_weight: f64,
    ) -> ParamVector {
        let mut grad = ParamVector::zeros(self.param_count());
        {
            let (policy_part, _) = grad.as_mut_slice().split_at_mut(self.bias_index());
            let (ga, gb) = policy_part.split_at_mut(self.history_start());
            self.policy()
                .accumulate_grad(joint, tokens, step_weights, ga, gb);
        }
        let raw = sigmoid(self.verdict_logit(joint, tokens));
        if verdict_weight != 0.0 && raw == clamp_prob(raw) {
            // d/dz log σ(z) = 1 - σ, d/dz log(1 - σ(z)) = -σ
            let dz = verdict_weight
                * match verdict {
                    Verdict::A => 1.0 - raw,
                    Verdict::B => -raw,
                };
            let freq = token_frequencies(tokens, self.vocab);
            let (first, second) = joint.split_at(self.dim);
            grad[self.bias_index()] += dz;
            for (k, g) in freq.iter().enumerate() {
                if *g != 0.0 {
                    grad[self.first_weight_index(k)] += dz * g * first[k];
                    grad[self.second_weight_index(k)] -= dz * g * second[k];
                }
            }
        }
        grad
    }
}
