//! Baselines: the scalar Bradley–Terry reward model and GPMs trained with
//! GRPO on pairwise and pointwise rewards.

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    bt_loss, clipped_term, clipped_term_slope, grpo_advantages, pairwise_reward, pointwise_reward,
    BaselineScorer, PreferencePair, Verdict,
};
use crate::model::{sigmoid, FeatureVector, GpmModel, ParamVector, Thought};
use crate::pairwise::{JudgeRollout, PairwiseGpm};
use crate::rng::SeedStream;
use crate::training::{initial_model, shuffled_order, HistoryRecord, TrainConfig, TrainHistory, TrainOutcome};

/// Sum of BT-loss gradients over a batch, `(∇u, ∇b)`; `∇b` is always zero.
pub fn bt_batch_gradient(scorer: &BaselineScorer, batch: &[&PreferencePair]) -> (Vec<f64>, f64) {
    let parts: Vec<Vec<f64>> = batch.par_iter().map(|p| scorer.bt_loss_grad(p)).collect();
    let mut total = vec![0.0; scorer.weights.len()];
    for g in &parts {
        for (t, x) in total.iter_mut().zip(g) {
            *t += x;
        }
    }
    (total, 0.0)
}

pub fn bt_batch_loss(scorer: &BaselineScorer, batch: &[&PreferencePair]) -> f64 {
    batch
        .iter()
        .map(|p| bt_loss(scorer.score(&p.ctx_plus), scorer.score(&p.ctx_minus)))
        .sum()
}

/// Plain gradient descent on the summed BT loss of each train batch.
pub fn train_bt(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome<BaselineScorer>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut scorer = BaselineScorer::zeros(dataset.meta.task.dim);
    let mut history = TrainHistory::default();
    let root = SeedStream::new(config.seed);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled_order(dataset.len(), &root, epoch);
        for idx in order.chunks(config.train_batch) {
            let mb: Vec<&PreferencePair> = idx.iter().map(|&i| &dataset.pairs[i]).collect();
            let margins: Vec<f64> = mb
                .iter()
                .map(|p| scorer.score(&p.ctx_plus) - scorer.score(&p.ctx_minus))
                .collect();
            let (gu, gb) = bt_batch_gradient(&scorer, &mb);
            if gu.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("BT gradient at step {step}")));
            }
            for (u, g) in scorer.weights.iter_mut().zip(&gu) {
                *u -= config.learning_rate * g;
            }
            scorer.bias -= config.learning_rate * gb;
            step += 1;
            let n = mb.len() as f64;
            history.records.push(HistoryRecord {
                step,
                epoch,
                exact_loss: Some(margins.iter().map(|&m| bt_loss(m, 0.0)).sum::<f64>() / n),
                batch_accuracy: margins
                    .iter()
                    .map(|&m| if m > 0.0 { 1.0 } else if m == 0.0 { 0.5 } else { 0.0 })
                    .sum::<f64>()
                    / n,
                mean_misalignment: Some(margins.iter().map(|&m| sigmoid(-m)).sum::<f64>() / n),
                mean_entropy: None,
            });
        }
        history.epoch_exact_loss.push(None);
    }
    Ok(TrainOutcome { model: scorer, history })
}

/// Judge rollouts for one presentation order of one pair.
#[derive(Debug, Clone)]
pub struct JudgeGroup {
    pub joint: Vec<f64>,
    pub label: Verdict,
    pub rollouts: Vec<JudgeRollout>,
    pub advantages: Vec<f64>,
}

/// Samples `n` judgements for both presentation orders of each pair.
pub fn rollout_pairwise(
    judge: &PairwiseGpm,
    batch: &[&PreferencePair],
    n: usize,
    stream: &SeedStream,
) -> Result<Vec<JudgeGroup>> {
    let groups: Vec<Vec<JudgeGroup>> = batch
        .par_iter()
        .enumerate()
        .map(|(j, pair)| {
            let orders = [
                (&pair.ctx_plus, &pair.ctx_minus, Verdict::A),
                (&pair.ctx_minus, &pair.ctx_plus, Verdict::B),
            ];
            orders
                .into_iter()
                .enumerate()
                .map(|(o, (first, second, label))| {
                    let joint = judge.joint_context(first, second)?;
                    let rollouts = judge.sample(&joint, n, &stream.path(&[j as u64, o as u64]));
                    let rewards: Vec<f64> = rollouts.iter().map(|r| pairwise_reward(r.verdict, label)).collect();
                    Ok(JudgeGroup {
                        advantages: grpo_advantages(&rewards)?,
                        joint,
                        label,
                        rollouts,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(groups.into_iter().flatten().collect())
}

fn ratio(new: f64, old: f64) -> Result<f64> {
    let g = (new - old).exp();
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite(format!("policy log-ratio {}", new - old)))
    }
}

/// `Σ_groups (1/n) Σ_i (1/(T+1)) Σ_t min(g Â, clip(g) Â)` over thought and verdict tokens.
pub fn pairwise_grpo_objective(judge: &PairwiseGpm, groups: &[JudgeGroup], epsilon: f64) -> Result<f64> {
    let mut total = 0.0;
    for g in groups {
        let n = g.rollouts.len() as f64;
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
            let new = judge.token_logprobs(&g.joint, &r.thought.tokens);
            let mut sum = 0.0;
            for (lp, old) in new.iter().zip(&r.thought.step_logprobs) {
                sum += clipped_term(ratio(*lp, *old)?, adv, epsilon);
            }
            let v = judge.verdict_logprob(&g.joint, &r.thought.tokens, r.verdict);
            sum += clipped_term(ratio(v, r.verdict_logprob)?, adv, epsilon);
            total += sum / (new.len() + 1) as f64 / n;
        }
    }
    Ok(total)
}

pub fn pairwise_grpo_gradient(judge: &PairwiseGpm, groups: &[JudgeGroup], epsilon: f64) -> Result<ParamVector> {
    let parts = groups
        .par_iter()
        .map(|g| {
            let n = g.rollouts.len() as f64;
            let mut grad = ParamVector::zeros(judge.param_count());
            for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
                if adv == 0.0 {
                    continue;
                }
                let tokens = &r.thought.tokens;
                let scale = 1.0 / ((tokens.len() + 1) as f64 * n);
                let new = judge.token_logprobs(&g.joint, tokens);
                let step_weights = new
                    .iter()
                    .zip(&r.thought.step_logprobs)
                    .map(|(lp, old)| ratio(*lp, *old).map(|q| scale * clipped_term_slope(q, adv, epsilon) * q))
                    .collect::<Result<Vec<_>>>()?;
                let gv = ratio(judge.verdict_logprob(&g.joint, tokens, r.verdict), r.verdict_logprob)?;
                let vw = scale * clipped_term_slope(gv, adv, epsilon) * gv;
                grad.add_scaled(
                    &judge.grad_weighted_logprobs(&g.joint, tokens, &step_weights, r.verdict, vw),
                    1.0,
                );
            }
            Ok(grad)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::sum_all(judge.param_count(), &parts))
}

fn check_group_size(config: &TrainConfig) -> Result<()> {
    if config.group_size < 2 {
        return Err(Error::Config("GRPO needs group_size >= 2".into()));
    }
    Ok(())
}

fn mean_reward(groups: &[JudgeGroup]) -> f64 {
    let (sum, count) = groups.iter().fold((0.0, 0usize), |(s, c), g| {
        (
            s + g.rollouts.iter().map(|r| pairwise_reward(r.verdict, g.label)).sum::<f64>(),
            c + g.rollouts.len(),
        )
    });
    sum / count.max(1) as f64
}

/// Pairwise judge trained with GRPO on both presentation orders of every pair.
pub fn train_grpo_pairwise(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome<PairwiseGpm>> {
    config.validate()?;
    check_group_size(config)?;
    let t = &dataset.meta.task;
    let mut judge = PairwiseGpm::zeros(t.vocab, t.thought_len, t.dim)?;
    let mut history = TrainHistory::default();
    let root = SeedStream::new(config.seed);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled_order(dataset.len(), &root, epoch);
        for (chunk_idx, chunk) in order.chunks(config.rollout_batch).enumerate() {
            let pairs: Vec<&PreferencePair> = chunk.iter().map(|&i| &dataset.pairs[i]).collect();
            let old = judge.clone();
            let stream = root.path(&[2, epoch as u64, chunk_idx as u64]);
            let groups = rollout_pairwise(&old, &pairs, config.group_size, &stream)?;
            // Two groups per pair, kept adjacent.
            for mb in groups.chunks(2 * config.train_batch) {
                let grad = pairwise_grpo_gradient(&judge, mb, config.clip_epsilon)?;
                judge.params_mut().add_scaled(&grad, config.learning_rate);
                step += 1;
                history.records.push(HistoryRecord {
                    step,
                    epoch,
                    exact_loss: None,
                    batch_accuracy: mean_reward(mb),
                    mean_misalignment: None,
                    mean_entropy: None,
                });
            }
        }
        history.epoch_exact_loss.push(None);
    }
    Ok(TrainOutcome { model: judge, history })
}

/// A thought followed by a sampled binary rating token (`true` = "Yes").
#[derive(Debug, Clone, PartialEq)]
pub struct RatedThought {
    pub thought: Thought,
    pub rating: bool,
    pub rating_logprob: f64,
}

/// One pointwise GRPO output: rated thoughts for both responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseSample {
    pub plus: RatedThought,
    pub minus: RatedThought,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseGroup {
    pub samples: Vec<PointwiseSample>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

fn rating_logprob(model: &GpmModel, ctx: &FeatureVector, tokens: &[usize], rating: bool) -> f64 {
    let p = model.answer_prob(ctx, tokens);
    if rating {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

fn rate(model: &GpmModel, ctx: &FeatureVector, stream: &SeedStream) -> Result<RatedThought> {
    let thought = model.sample_thoughts(ctx, 1, &stream.child(0))?.remove(0);
    let p = model.answer_prob(ctx, &thought.tokens);
    let rating = stream.child(1).rng().gen::<f64>() < p;
    Ok(RatedThought {
        rating_logprob: rating_logprob(model, ctx, &thought.tokens, rating),
        thought,
        rating,
    })
}

pub fn rollout_pointwise(
    model: &GpmModel,
    batch: &[&PreferencePair],
    n: usize,
    stream: &SeedStream,
) -> Result<Vec<PointwiseGroup>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(j, pair)| {
            let samples = (0..n)
                .map(|i| {
                    let s = stream.path(&[j as u64, i as u64]);
                    Ok(PointwiseSample {
                        plus: rate(model, &pair.ctx_plus, &s.child(0))?,
                        minus: rate(model, &pair.ctx_minus, &s.child(1))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let rewards: Vec<f64> = samples
                .iter()
                .map(|s| pointwise_reward(f64::from(u8::from(s.plus.rating)), f64::from(u8::from(s.minus.rating))))
                .collect();
            Ok(PointwiseGroup {
                advantages: grpo_advantages(&rewards)?,
                samples,
                rewards,
            })
        })
        .collect()
}

fn rated_sides<'a>(pair: &'a PreferencePair, s: &'a PointwiseSample) -> [(&'a FeatureVector, &'a RatedThought); 2] {
    [(&pair.ctx_plus, &s.plus), (&pair.ctx_minus, &s.minus)]
}

/// Clipped surrogate over the `2(T+1)` tokens of every pointwise output.
pub fn pointwise_grpo_objective(
    model: &GpmModel,
    batch: &[&PreferencePair],
    groups: &[PointwiseGroup],
    epsilon: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (pair, g) in batch.iter().zip(groups) {
        let n = g.samples.len() as f64;
        for (s, &adv) in g.samples.iter().zip(&g.advantages) {
            let mut sum = 0.0;
            let mut len = 0usize;
            for (ctx, rt) in rated_sides(pair, s) {
                let new = model.token_logprobs(ctx, &rt.thought.tokens);
                for (lp, old) in new.iter().zip(&rt.thought.step_logprobs) {
                    sum += clipped_term(ratio(*lp, *old)?, adv, epsilon);
                }
                let v = rating_logprob(model, ctx, &rt.thought.tokens, rt.rating);
                sum += clipped_term(ratio(v, rt.rating_logprob)?, adv, epsilon);
                len += new.len() + 1;
            }
            total += sum / len as f64 / n;
        }
    }
    Ok(total)
}

pub fn pointwise_grpo_gradient(
    model: &GpmModel,
    batch: &[&PreferencePair],
    groups: &[PointwiseGroup],
    epsilon: f64,
) -> Result<ParamVector> {
    let parts = (0..batch.len())
        .into_par_iter()
        .map(|j| {
            let (pair, g) = (batch[j], &groups[j]);
            let n = g.samples.len() as f64;
            let mut grad = ParamVector::zeros(model.param_count());
            for (s, &adv) in g.samples.iter().zip(&g.advantages) {
                if adv == 0.0 {
                    continue;
                }
                let len: usize = rated_sides(pair, s).iter().map(|(_, rt)| rt.thought.tokens.len() + 1).sum();
                let scale = 1.0 / (len as f64 * n);
                for (ctx, rt) in rated_sides(pair, s) {
                    let tokens = &rt.thought.tokens;
                    let new = model.token_logprobs(ctx, tokens);
                    let step_weights = new
                        .iter()
                        .zip(&rt.thought.step_logprobs)
                        .map(|(lp, old)| ratio(*lp, *old).map(|q| scale * clipped_term_slope(q, adv, epsilon) * q))
                        .collect::<Result<Vec<_>>>()?;
                    grad.add_scaled(&model.grad_weighted_token_logprobs(ctx, tokens, &step_weights), 1.0);
                    let gv = ratio(rating_logprob(model, ctx, tokens, rt.rating), rt.rating_logprob)?;
                    let vw = scale * clipped_term_slope(gv, adv, epsilon) * gv;
                    if rt.rating {
                        model.add_grad_log_answer_prob(ctx, tokens, vw, &mut grad);
                    } else {
                        model.add_grad_log_reject_prob(ctx, tokens, vw, &mut grad);
                    }
                }
            }
            Ok(grad)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::sum_all(model.param_count(), &parts))
}

/// Pointwise GPM trained with GRPO; each output rates both responses and earns
/// reward 1 only when the preferred response alone is rated "Yes".
pub fn train_grpo_pointwise(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome<GpmModel>> {
    config.validate()?;
    check_group_size(config)?;
    let mut model = initial_model(dataset)?;
    let mut history = TrainHistory::default();
    let root = SeedStream::new(config.seed);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled_order(dataset.len(), &root, epoch);
        for (chunk_idx, chunk) in order.chunks(config.rollout_batch).enumerate() {
            let pairs: Vec<&PreferencePair> = chunk.iter().map(|&i| &dataset.pairs[i]).collect();
            let old = model.clone();
            let stream = root.path(&[3, epoch as u64, chunk_idx as u64]);
            let groups = rollout_pointwise(&old, &pairs, config.group_size, &stream)?;
            for (mb, mg) in pairs.chunks(config.train_batch).zip(groups.chunks(config.train_batch)) {
                let grad = pointwise_grpo_gradient(&model, mb, mg, config.clip_epsilon)?;
                model.params_mut().add_scaled(&grad, config.learning_rate);
                step += 1;
                let rewards: Vec<f64> = mg.iter().flat_map(|g| g.rewards.iter().copied()).collect();
                history.records.push(HistoryRecord {
                    step,
                    epoch,
                    exact_loss: None,
                    batch_accuracy: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
                    mean_misalignment: None,
                    mean_entropy: None,
                });
            }
        }
        history.epoch_exact_loss.push(None);
    }
    Ok(TrainOutcome { model, history })
}
