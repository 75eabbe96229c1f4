//! Losses, weights and gradient estimators for thought-conditioned
//! Bradley–Terry preference modeling, plus the GRPO baseline objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    clamp_prob, enumerate_thoughts, sigmoid, FeatureVector, GpmModel, ParamVector, Thought,
};

/// A prompt with a preferred (`plus`) and a less-preferred (`minus`) response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub ctx_plus: FeatureVector,
    pub ctx_minus: FeatureVector,
    /// Informative channel of a synthetic pair, when known.
    pub k_star: Option<usize>,
}

impl PreferencePair {
    pub fn new(pair_id: impl Into<String>, ctx_plus: FeatureVector, ctx_minus: FeatureVector) -> Result<Self> {
        if ctx_plus.dim() != ctx_minus.dim() {
            return Err(Error::DimensionMismatch {
                expected: ctx_plus.dim(),
                actual: ctx_minus.dim(),
            });
        }
        Ok(Self {
            pair_id: pair_id.into(),
            ctx_plus,
            ctx_minus,
            k_star: None,
        })
    }

    /// The same pair with the roles of the two responses exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            pair_id: self.pair_id.clone(),
            ctx_plus: self.ctx_minus.clone(),
            ctx_minus: self.ctx_plus.clone(),
            k_star: self.k_star,
        }
    }
}

/// Which of two presented responses a judge prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
}

impl Verdict {
    pub fn other(self) -> Self {
        match self {
            Verdict::A => Verdict::B,
            Verdict::B => Verdict::A,
        }
    }
}

/// `n` thoughts for one response with their self-normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ThoughtGroup {
    pub thoughts: Vec<Thought>,
    /// `π(a | x, y, o_i)`
    pub answer_probs: Vec<f64>,
    /// `ω̃_i = π_i / Σ_j π_j`
    pub norm_weights: Vec<f64>,
    /// `Â_i = ω̃_i - 1/n`
    pub advantages: Vec<f64>,
}

impl ThoughtGroup {
    pub fn new(thoughts: Vec<Thought>, answer_probs: Vec<f64>) -> Result<Self> {
        if thoughts.len() != answer_probs.len() {
            return Err(Error::DimensionMismatch {
                expected: thoughts.len(),
                actual: answer_probs.len(),
            });
        }
        let answer_probs: Vec<f64> = answer_probs.into_iter().map(clamp_prob).collect();
        let norm_weights = self_normalized_weights(&answer_probs)?;
        let uniform = 1.0 / norm_weights.len() as f64;
        let advantages = norm_weights.iter().map(|w| w - uniform).collect();
        Ok(Self {
            thoughts,
            answer_probs,
            norm_weights,
            advantages,
        })
    }

    /// Scores the thoughts with the model's answer head.
    pub fn score(model: &GpmModel, ctx: &FeatureVector, thoughts: Vec<Thought>) -> Result<Self> {
        let probs = thoughts
            .iter()
            .map(|t| model.answer_prob(ctx, &t.tokens))
            .collect();
        Self::new(thoughts, probs)
    }

    pub fn len(&self) -> usize {
        self.thoughts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thoughts.is_empty()
    }

    pub fn answer_sum(&self) -> f64 {
        self.answer_probs.iter().sum()
    }
}

/// Misalignment weight and the two groups it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    /// `p̂(y⁺ ≺ y⁻ | x)`
    pub misalignment: f64,
    pub group_plus: ThoughtGroup,
    pub group_minus: ThoughtGroup,
}

impl DualWeights {
    pub fn new(group_plus: ThoughtGroup, group_minus: ThoughtGroup) -> Result<Self> {
        let misalignment = misalignment_weight(&group_plus, &group_minus)?;
        Ok(Self {
            misalignment,
            group_plus,
            group_minus,
        })
    }

    /// Rescores both groups under `model`, keeping the thoughts.
    pub fn rescored(&self, model: &GpmModel, pair: &PreferencePair) -> Result<Self> {
        Self::new(
            ThoughtGroup::score(model, &pair.ctx_plus, self.group_plus.thoughts.clone())?,
            ThoughtGroup::score(model, &pair.ctx_minus, self.group_minus.thoughts.clone())?,
        )
    }
}

/// Exact marginals and loss of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub p_plus: f64,
    pub p_minus: f64,
    pub loss: f64,
}

/// Linear scalar reward model `r(ctx) = u·ctx + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BaselineScorer {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn score(&self, ctx: &FeatureVector) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(ctx.values())
                .map(|(u, x)| u * x)
                .sum::<f64>()
    }

    /// `∇_u` of `bt_loss(r(plus), r(minus))`; the bias cancels in the margin.
    pub fn bt_loss_grad(&self, pair: &PreferencePair) -> Vec<f64> {
        let margin = self.score(&pair.ctx_plus) - self.score(&pair.ctx_minus);
        let coeff = -sigmoid(-margin);
        pair.ctx_plus
            .values()
            .iter()
            .zip(pair.ctx_minus.values())
            .map(|(p, m)| coeff * (p - m))
            .collect()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `-log σ(r⁺ - r⁻)`
pub fn bt_loss(r_plus: f64, r_minus: f64) -> f64 {
    softplus(r_minus - r_plus)
}

/// `σ(r⁺ - r⁻)`, the probability that `plus` is preferred.
pub fn bt_preference_prob(r_plus: f64, r_minus: f64) -> f64 {
    sigmoid(r_plus - r_minus)
}

/// `p(a | ctx) = Σ_o π(o | ctx) π(a | ctx, o)` by full enumeration.
pub fn exact_marginal(model: &GpmModel, ctx: &FeatureVector, cap: usize) -> Result<f64> {
    model.check_ctx(ctx)?;
    let thoughts = enumerate_thoughts(model.vocab(), model.thought_len(), cap)?;
    Ok(thoughts
        .iter()
        .map(|o| {
            let lp: f64 = model.token_logprobs(ctx, o).iter().sum();
            lp.exp() * model.answer_prob(ctx, o)
        })
        .sum())
}

fn pair_loss(p_plus: f64, p_minus: f64) -> f64 {
    -(p_plus / (p_plus + p_minus)).ln()
}

/// Exact thought-conditioned Bradley–Terry loss of one pair.
pub fn exact_loss(model: &GpmModel, pair: &PreferencePair, cap: usize) -> Result<PairEstimate> {
    let p_plus = exact_marginal(model, &pair.ctx_plus, cap)?;
    let p_minus = exact_marginal(model, &pair.ctx_minus, cap)?;
    Ok(PairEstimate {
        p_plus,
        p_minus,
        loss: pair_loss(p_plus, p_minus),
    })
}

/// `(p, ∇p)` with `∇p = E_o[π(a|o)(∇log π(a|o) + ∇log π(o))]` summed exactly.
fn exact_marginal_and_grad(
    model: &GpmModel,
    ctx: &FeatureVector,
    thoughts: &[Vec<usize>],
) -> (f64, ParamVector) {
    let mut p = 0.0;
    let mut grad = ParamVector::zeros(model.param_count());
    for o in thoughts {
        let lp: f64 = model.token_logprobs(ctx, o).iter().sum();
        let weight = lp.exp() * model.answer_prob(ctx, o);
        p += weight;
        let mut g = model.grad_log_thought_prob(ctx, o);
        model.add_grad_log_answer_prob(ctx, o, 1.0, &mut g);
        grad.add_scaled(&g, weight);
    }
    (p, grad)
}

/// `∇l = -(p⁻/(p⁺+p⁻)) (∇log p⁺ - ∇log p⁻)` with exact expectations.
pub fn exact_gradient(model: &GpmModel, pair: &PreferencePair, cap: usize) -> Result<ParamVector> {
    model.check_ctx(&pair.ctx_plus)?;
    model.check_ctx(&pair.ctx_minus)?;
    let thoughts = enumerate_thoughts(model.vocab(), model.thought_len(), cap)?;
    let (p_plus, g_plus) = exact_marginal_and_grad(model, &pair.ctx_plus, &thoughts);
    let (p_minus, g_minus) = exact_marginal_and_grad(model, &pair.ctx_minus, &thoughts);
    let coeff = -p_minus / (p_plus + p_minus);
    let mut grad = g_plus.scaled(coeff / p_plus);
    grad.add_scaled(&g_minus, -coeff / p_minus);
    Ok(grad)
}

/// `ω̃_i = p_i / Σ_j p_j`
pub fn self_normalized_weights(answer_probs: &[f64]) -> Result<Vec<f64>> {
    if answer_probs.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let total: f64 = answer_probs.iter().sum();
    Ok(answer_probs.iter().map(|p| p / total).collect())
}

/// `p̂(y⁺ ≺ y⁻) = Σπ⁻ / (Σπ⁺ + Σπ⁻)`
pub fn misalignment_weight(group_plus: &ThoughtGroup, group_minus: &ThoughtGroup) -> Result<f64> {
    if group_plus.is_empty() || group_minus.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let (sp, sm) = (group_plus.answer_sum(), group_minus.answer_sum());
    Ok(sm / (sp + sm))
}

/// Monte Carlo estimate of `∇l` from two sampled groups:
///
/// `-p̂ Σ_i [ω̃⁺_i (∇log π(a|o⁺_i) + ∇log π(o⁺_i)) - ω̃⁻_i (∇log π(a|o⁻_i) + ∇log π(o⁻_i))]`
///
/// Gradients are taken under `model`; the weights are taken from `weights`.
pub fn dwrl_gradient_estimate(
    model: &GpmModel,
    pair: &PreferencePair,
    weights: &DualWeights,
) -> ParamVector {
    let mut grad = ParamVector::zeros(model.param_count());
    let sides = [
        (&pair.ctx_plus, &weights.group_plus, 1.0),
        (&pair.ctx_minus, &weights.group_minus, -1.0),
    ];
    for (ctx, group, sign) in sides {
        for (thought, w) in group.thoughts.iter().zip(&group.norm_weights) {
            let scale = -weights.misalignment * sign * w;
            let g = model.grad_log_thought_prob(ctx, &thought.tokens);
            grad.add_scaled(&g, scale);
            model.add_grad_log_answer_prob(ctx, &thought.tokens, scale, &mut grad);
        }
    }
    grad
}

/// Group-standardized rewards `(R_i - mean) / std` with population std.
/// A group with zero variance gets all-zero advantages.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "GRPO needs at least 2 rewards per group, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let constant = rewards.iter().all(|&r| r == rewards[0]);
    if constant || std <= 1e-12 * mean.abs().max(1.0) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// 1 when the judge picked the human-preferred response.
pub fn pairwise_reward(verdict: Verdict, human_label: Verdict) -> f64 {
    f64::from(u8::from(verdict == human_label))
}

/// 1 when the preferred response strictly outscores the other; ties score 0.
pub fn pointwise_reward(s_plus: f64, s_minus: f64) -> f64 {
    f64::from(u8::from(s_plus > s_minus))
}

/// `min(g·Â, clip(g, 1-ε, 1+ε)·Â)`
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// `∂/∂g` of [`clipped_term`]: zero on the clip plateau, `Â` elsewhere.
pub fn clipped_term_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let plateau = (advantage > 0.0 && ratio > 1.0 + epsilon)
        || (advantage < 0.0 && ratio < 1.0 - epsilon);
    if plateau {
        0.0
    } else {
        advantage
    }
}

/// `(1/n) Σ_i (1/|o_i|) Σ_t min(g_{i,t} Â_i, clip(g_{i,t}) Â_i)`
pub fn grpo_clipped_objective(ratios: &[Vec<f64>], advantages: &[f64], epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Config(format!("clip epsilon must be positive, got {epsilon}")));
    }
    if ratios.len() != advantages.len() {
        return Err(Error::DimensionMismatch {
            expected: advantages.len(),
            actual: ratios.len(),
        });
    }
    if ratios.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let total: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(g, &a)| g.iter().map(|&r| clipped_term(r, a, epsilon)).sum::<f64>() / g.len() as f64)
        .sum();
    Ok(total / ratios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thought(tokens: Vec<usize>) -> Thought {
        Thought {
            tokens,
            logprob: 0.0,
            step_logprobs: vec![],
        }
    }

    fn group(probs: &[f64]) -> ThoughtGroup {
        ThoughtGroup::new(probs.iter().map(|_| thought(vec![0])).collect(), probs.to_vec()).unwrap()
    }

    #[test]
    fn bt_loss_values() {
        assert!((bt_loss(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        // ln(1 + e^-1) = 0.313261687518222834...
        assert!((bt_loss(1.0, 0.0) - 0.313_261_687_518_222_8).abs() < 1e-15);
        assert!(bt_loss(800.0, 0.0) < 1e-300);
        assert!(bt_loss(2.0, 0.0) < bt_loss(1.0, 0.0));
        assert!(bt_loss(0.0, 800.0).is_finite());
    }

    #[test]
    fn bt_preference_prob_values() {
        assert_eq!(bt_preference_prob(0.3, 0.3), 0.5);
        assert!((bt_preference_prob(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
        let (a, b) = (0.7, -1.9);
        assert!((bt_preference_prob(a, b) + bt_preference_prob(b, a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_normalized_weight_examples() {
        assert_eq!(self_normalized_weights(&[0.2, 0.2, 0.2]).unwrap(), vec![1.0 / 3.0; 3]);
        let w = self_normalized_weights(&[0.1, 0.3]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        assert_eq!(self_normalized_weights(&[0.4]).unwrap(), vec![1.0]);
        assert!(matches!(self_normalized_weights(&[]), Err(Error::EmptyGroup)));
    }

    #[test]
    fn misalignment_examples() {
        let eq = misalignment_weight(&group(&[0.5, 0.5]), &group(&[0.25, 0.75])).unwrap();
        assert!((eq - 0.5).abs() < 1e-15);
        let m = misalignment_weight(&group(&[0.9, 0.8, 0.7, 0.6]), &group(&[0.25, 0.25, 0.25, 0.25]))
            .unwrap();
        assert!((m - 0.25).abs() < 1e-15);
        let up = misalignment_weight(&group(&[0.95, 0.8, 0.7, 0.6]), &group(&[0.25; 4])).unwrap();
        assert!(up < m);
        let empty = ThoughtGroup {
            thoughts: vec![],
            answer_probs: vec![],
            norm_weights: vec![],
            advantages: vec![],
        };
        assert!(misalignment_weight(&empty, &group(&[0.5])).is_err());
    }

    #[test]
    fn group_advantages_center() {
        let g = group(&[0.1, 0.3, 0.6]);
        assert!(g.advantages.iter().sum::<f64>().abs() < 1e-15);
        let single = group(&[0.37]);
        assert_eq!(single.norm_weights, vec![1.0]);
        assert_eq!(single.advantages, vec![0.0]);
    }

    #[test]
    fn grpo_advantage_examples() {
        let a = grpo_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        // mean 1/4, population std sqrt(3)/4
        let expect = [3f64.sqrt(), -1.0 / 3f64.sqrt(), -1.0 / 3f64.sqrt(), -1.0 / 3f64.sqrt()];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!((a[0] - 1.7321).abs() < 1e-4 && (a[1] + 0.5774).abs() < 1e-4);
        assert_eq!(grpo_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(grpo_advantages(&[1.0]).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_eq!(pairwise_reward(Verdict::A, Verdict::A), 1.0);
        assert_eq!(pairwise_reward(Verdict::B, Verdict::A), 0.0);
        for (v, l) in [(Verdict::A, Verdict::B), (Verdict::B, Verdict::B)] {
            assert_eq!(pairwise_reward(v, l), pairwise_reward(v.other(), l.other()));
        }
        assert_eq!(pointwise_reward(0.7, 0.3), 1.0);
        assert_eq!(pointwise_reward(0.3, 0.7), 0.0);
        assert_eq!(pointwise_reward(0.5, 0.5), 0.0);
    }

    #[test]
    fn clipped_objective_examples() {
        let adv = [0.5, -0.2, 0.1];
        let ones = vec![vec![1.0; 3]; 3];
        let j = grpo_clipped_objective(&ones, &adv, 0.2).unwrap();
        assert!((j - adv.iter().sum::<f64>() / 3.0).abs() < 1e-15);

        let eps = 0.2;
        assert!((clipped_term(1.0 + 2.0 * eps, 0.5, eps) - (1.0 + eps) * 0.5).abs() < 1e-15);
        assert_eq!(clipped_term_slope(1.0 + 2.0 * eps, 0.5, eps), 0.0);
        assert_eq!(clipped_term_slope(1.0 - 2.0 * eps, -0.5, eps), 0.0);
        assert_eq!(clipped_term_slope(1.0 - 2.0 * eps, 0.5, eps), 0.5);
        assert!(grpo_clipped_objective(&ones, &adv, 0.0).is_err());
    }

    #[test]
    fn baseline_gradient_matches_finite_difference() {
        let pair = PreferencePair::new(
            "p",
            FeatureVector::new(vec![1.0, -0.5]).unwrap(),
            FeatureVector::new(vec![0.2, 0.4]).unwrap(),
        )
        .unwrap();
        let scorer = BaselineScorer {
            weights: vec![0.3, -0.7],
            bias: 0.1,
        };
        let g = scorer.bt_loss_grad(&pair);
        let h = 1e-6;
        for i in 0..2 {
            let mut p = scorer.clone();
            p.weights[i] += h;
            let mut m = scorer.clone();
            m.weights[i] -= h;
            let f = |s: &BaselineScorer| bt_loss(s.score(&pair.ctx_plus), s.score(&pair.ctx_minus));
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-9);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weights_normalize(probs in prop::collection::vec(1e-9f64..1.0, 1..16)) {
                let w = self_normalized_weights(&probs).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }

            #[test]
            fn misalignment_complement(
                a in prop::collection::vec(1e-6f64..1.0, 1..8),
                b in prop::collection::vec(1e-6f64..1.0, 1..8),
            ) {
                let (ga, gb) = (group(&a), group(&b));
                let m = misalignment_weight(&ga, &gb).unwrap();
                let swapped = misalignment_weight(&gb, &ga).unwrap();
                prop_assert!((m + swapped - 1.0).abs() < 1e-12);
                prop_assert!(m > 0.0 && m < 1.0);
            }

            #[test]
            fn grpo_standardizes(rewards in prop::collection::vec(-5.0f64..5.0, 2..12)) {
                let a = grpo_advantages(&rewards).unwrap();
                let n = a.len() as f64;
                let mean = a.iter().sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                prop_assert!((var - 1.0).abs() < 1e-9 || a.iter().all(|&x| x == 0.0));
            }

            #[test]
            fn clipped_never_exceeds_unclipped(
                ratios in prop::collection::vec(prop::collection::vec(0.1f64..3.0, 1..5), 1..5),
                adv_seed in prop::collection::vec(-2.0f64..2.0, 5),
                eps in 0.01f64..0.5,
            ) {
                let adv: Vec<f64> = adv_seed[..ratios.len()].to_vec();
                let clipped = grpo_clipped_objective(&ratios, &adv, eps).unwrap();
                let unclipped: f64 = ratios.iter().zip(&adv)
                    .map(|(g, a)| g.iter().map(|r| r * a).sum::<f64>() / g.len() as f64)
                    .sum::<f64>() / ratios.len() as f64;
                prop_assert!(clipped <= unclipped + 1e-12);
            }
        }
    }
}
