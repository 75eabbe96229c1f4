//! Alternating DWRL training: rollout under a snapshot policy, one
//! preference-scoring step, weight recomputation, then one clipped
//! thought-generation step per train batch.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    clipped_term, clipped_term_slope, exact_loss, DualWeights, PreferencePair, ThoughtGroup,
};
use crate::model::{FeatureVector, GpmModel, ParamVector, Thought};
use crate::rng::SeedStream;

/// Training methods exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dwrl,
    Bt,
    GrpoPair,
    GrpoPoint,
    NoMisalign,
    Prefilled,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dwrl,
        Method::Bt,
        Method::GrpoPair,
        Method::GrpoPoint,
        Method::NoMisalign,
        Method::Prefilled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dwrl => "dwrl",
            Method::Bt => "bt",
            Method::GrpoPair => "grpo-pair",
            Method::GrpoPoint => "grpo-point",
            Method::NoMisalign => "no-misalign",
            Method::Prefilled => "prefilled",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; valid methods: {}", valid.join(", ")))
            })
    }
}

/// How the thought step treats the group of the less-preferred response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinusGroupSign {
    /// The minus group enters with a negative sign, so that the thought step
    /// follows the estimated descent direction of the pair loss.
    Descent,
    /// Both groups enter with the same positive coefficient.
    Literal,
}

impl MinusGroupSign {
    fn factor(self) -> f64 {
        match self {
            MinusGroupSign::Descent => -1.0,
            MinusGroupSign::Literal => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Thoughts sampled per response.
    pub group_size: usize,
    /// Pairs rolled out per snapshot refresh.
    pub rollout_batch: usize,
    /// Pairs per parameter update.
    pub train_batch: usize,
    /// Step size of the scoring step and of the baselines.
    pub learning_rate: f64,
    /// Step size of the thought step.
    pub thought_learning_rate: f64,
    pub epochs: usize,
    pub clip_epsilon: f64,
    pub seed: u64,
    pub minus_group_sign: MinusGroupSign,
    /// Largest `V^T` for which exact losses are tracked in the history.
    pub exact_loss_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            rollout_batch: 256,
            train_batch: 32,
            learning_rate: 1e-2,
            thought_learning_rate: 1e-2,
            epochs: 2,
            clip_epsilon: 0.2,
            seed: 0,
            minus_group_sign: MinusGroupSign::Descent,
            exact_loss_cap: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.group_size == 0 {
            return bad("group_size must be at least 1".into());
        }
        if self.rollout_batch == 0 || self.train_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.thought_learning_rate >= 0.0 && self.thought_learning_rate.is_finite()) {
            return bad(format!(
                "thought_learning_rate must be non-negative, got {}",
                self.thought_learning_rate
            ));
        }
        if self.clip_epsilon.is_nan() || self.clip_epsilon <= 0.0 {
            return bad(format!("clip_epsilon must be positive, got {}", self.clip_epsilon));
        }
        Ok(())
    }
}

/// One line of the training-history stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub epoch: usize,
    pub exact_loss: Option<f64>,
    pub batch_accuracy: f64,
    pub mean_misalignment: Option<f64>,
    pub mean_entropy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    /// Mean exact loss over the training set after each epoch, when enumerable.
    pub epoch_exact_loss: Vec<Option<f64>>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "step,epoch,exact_loss,batch_accuracy,mean_misalignment,mean_entropy";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                r.epoch,
                opt(r.exact_loss),
                r.batch_accuracy,
                opt(r.mean_misalignment),
                opt(r.mean_entropy)
            ));
        }
        out
    }
}

/// Current parameters plus the snapshot used for sampling.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: GpmModel,
    pub old_model: GpmModel,
    pub step: usize,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(model: GpmModel) -> Self {
        Self {
            old_model: model.clone(),
            model,
            step: 0,
            history: TrainHistory::default(),
        }
    }

    pub fn refresh_snapshot(&mut self) {
        self.old_model = self.model.clone();
    }
}

/// Coefficients of the two DWRL update steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Scale pair updates by `p̂`; when false `p̂ := 1`.
    pub use_misalignment: bool,
    pub clip_epsilon: f64,
    pub minus_group_sign: MinusGroupSign,
}

impl StepOptions {
    pub fn from_config(config: &TrainConfig, use_misalignment: bool) -> Self {
        Self {
            use_misalignment,
            clip_epsilon: config.clip_epsilon,
            minus_group_sign: config.minus_group_sign,
        }
    }

    fn pair_coeff(&self, w: &DualWeights) -> f64 {
        if self.use_misalignment {
            w.misalignment
        } else {
            1.0
        }
    }
}

/// Fixed-order sum of per-pair gradients computed in parallel.
fn parallel_sum<F>(len: usize, n_pairs: usize, f: F) -> Result<ParamVector>
where
    F: Fn(usize) -> Result<ParamVector> + Sync + Send,
{
    let parts = (0..n_pairs).into_par_iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::sum_all(len, &parts))
}

/// Samples `n` thoughts per response from the snapshot policy and scores them
/// under the snapshot. Pair `j` of the batch uses child stream `j`.
pub fn rollout(
    state: &TrainState,
    batch: &[&PreferencePair],
    n: usize,
    stream: &SeedStream,
) -> Result<Vec<DualWeights>> {
    if batch.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let old = &state.old_model;
    batch
        .par_iter()
        .enumerate()
        .map(|(j, pair)| {
            let s = stream.child(j as u64);
            let plus = old.sample_thoughts(&pair.ctx_plus, n, &s.child(0))?;
            let minus = old.sample_thoughts(&pair.ctx_minus, n, &s.child(1))?;
            DualWeights::new(
                ThoughtGroup::score(old, &pair.ctx_plus, plus)?,
                ThoughtGroup::score(old, &pair.ctx_minus, minus)?,
            )
        })
        .collect()
}

/// `Σ_pairs -c Σ_i (ω̃⁺_i log π(a|o⁺_i) - ω̃⁻_i log π(a|o⁻_i))` with `c` and
/// `ω̃` frozen.
pub fn score_objective(
    model: &GpmModel,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
    opts: &StepOptions,
) -> f64 {
    batch
        .iter()
        .zip(weights)
        .map(|(pair, w)| {
            let side = |ctx: &FeatureVector, g: &ThoughtGroup| -> f64 {
                g.thoughts
                    .iter()
                    .zip(&g.norm_weights)
                    .map(|(t, wi)| wi * model.log_answer_prob(ctx, &t.tokens))
                    .sum()
            };
            -opts.pair_coeff(w) * (side(&pair.ctx_plus, &w.group_plus) - side(&pair.ctx_minus, &w.group_minus))
        })
        .sum()
}

pub fn score_gradient(
    model: &GpmModel,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
    opts: &StepOptions,
) -> Result<ParamVector> {
    parallel_sum(model.param_count(), batch.len(), |j| {
        let (pair, w) = (batch[j], &weights[j]);
        let c = opts.pair_coeff(w);
        let mut g = ParamVector::zeros(model.param_count());
        for (t, wi) in w.group_plus.thoughts.iter().zip(&w.group_plus.norm_weights) {
            model.add_grad_log_answer_prob(&pair.ctx_plus, &t.tokens, -c * wi, &mut g);
        }
        for (t, wi) in w.group_minus.thoughts.iter().zip(&w.group_minus.norm_weights) {
            model.add_grad_log_answer_prob(&pair.ctx_minus, &t.tokens, c * wi, &mut g);
        }
        Ok(g)
    })
}

/// One gradient-descent step on [`score_objective`]; returns the gradient.
pub fn score_step(
    state: &mut TrainState,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
    learning_rate: f64,
    opts: &StepOptions,
) -> Result<ParamVector> {
    let grad = score_gradient(&state.model, batch, weights, opts)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!(
            "scoring gradient at step {} (max |g| = {})",
            state.step,
            grad.max_abs()
        )));
    }
    state.model.params_mut().add_scaled(&grad, -learning_rate);
    Ok(grad)
}

/// Rescores the rolled-out thoughts under the current parameters.
pub fn recompute_weights(
    model: &GpmModel,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
) -> Result<Vec<DualWeights>> {
    batch
        .par_iter()
        .zip(weights)
        .map(|(pair, w)| w.rescored(model, pair))
        .collect()
}

fn ratios(model: &GpmModel, ctx: &FeatureVector, thought: &Thought) -> Result<Vec<f64>> {
    model
        .token_logprobs(ctx, &thought.tokens)
        .iter()
        .zip(&thought.step_logprobs)
        .map(|(new, old)| {
            let g = (new - old).exp();
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::NonFinite(format!(
                    "policy ratio for thought {:?} (log-ratio {})",
                    thought.tokens,
                    new - old
                )))
            }
        })
        .collect()
}

fn group_sides<'a>(
    pair: &'a PreferencePair,
    w: &'a DualWeights,
    opts: &StepOptions,
) -> [(&'a FeatureVector, &'a ThoughtGroup, f64); 2] {
    [
        (&pair.ctx_plus, &w.group_plus, 1.0),
        (&pair.ctx_minus, &w.group_minus, opts.minus_group_sign.factor()),
    ]
}

/// `Σ_pairs c/n Σ_groups s Σ_i (1/T) Σ_t min(g Â_i, clip(g, 1±ε) Â_i)`, with `g`
/// measured against the snapshot step log-probabilities stored in the thoughts.
pub fn thought_objective(
    model: &GpmModel,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
    opts: &StepOptions,
) -> Result<f64> {
    let mut total = 0.0;
    for (pair, w) in batch.iter().zip(weights) {
        let c = opts.pair_coeff(w);
        for (ctx, group, sign) in group_sides(pair, w, opts) {
            let n = group.len() as f64;
            for (t, &adv) in group.thoughts.iter().zip(&group.advantages) {
                let g = ratios(model, ctx, t)?;
                let mean: f64 =
                    g.iter().map(|&r| clipped_term(r, adv, opts.clip_epsilon)).sum::<f64>() / g.len() as f64;
                total += c / n * sign * mean;
            }
        }
    }
    Ok(total)
}

pub fn thought_gradient(
    model: &GpmModel,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
    opts: &StepOptions,
) -> Result<ParamVector> {
    parallel_sum(model.param_count(), batch.len(), |j| {
        let (pair, w) = (batch[j], &weights[j]);
        let c = opts.pair_coeff(w);
        let mut grad = ParamVector::zeros(model.param_count());
        for (ctx, group, sign) in group_sides(pair, w, opts) {
            let n = group.len() as f64;
            for (t, &adv) in group.thoughts.iter().zip(&group.advantages) {
                if adv == 0.0 {
                    continue;
                }
                let g = ratios(model, ctx, t)?;
                let len = g.len() as f64;
                // d/dφ g = g ∇log π_φ(o_t)
                let step_weights: Vec<f64> = g
                    .iter()
                    .map(|&r| c / n * sign / len * clipped_term_slope(r, adv, opts.clip_epsilon) * r)
                    .collect();
                grad.add_scaled(&model.grad_weighted_token_logprobs(ctx, &t.tokens, &step_weights), 1.0);
            }
        }
        Ok(grad)
    })
}

/// One gradient-ascent step on [`thought_objective`]; returns the gradient.
pub fn thought_step(
    state: &mut TrainState,
    batch: &[&PreferencePair],
    weights: &[DualWeights],
    learning_rate: f64,
    opts: &StepOptions,
) -> Result<ParamVector> {
    let grad = thought_gradient(&state.model, batch, weights, opts)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!("thought gradient at step {}", state.step)));
    }
    state.model.params_mut().add_scaled(&grad, learning_rate);
    Ok(grad)
}

/// Mean exact loss of `pairs`, or `None` when the thought space exceeds `cap`.
pub fn mean_exact_loss(model: &GpmModel, pairs: &[&PreferencePair], cap: usize) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let losses = pairs
        .par_iter()
        .map(|p| exact_loss(model, p, cap).map(|e| e.loss))
        .collect::<Result<Vec<_>>>()
        .ok()?;
    Some(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub(crate) fn shuffled_order(len: usize, root: &SeedStream, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut root.path(&[0, epoch as u64]).rng());
    order
}

fn preference_accuracy(misalignments: impl Iterator<Item = f64>) -> f64 {
    let (mut hits, mut count) = (0.0, 0usize);
    for m in misalignments {
        hits += if m < 0.5 {
            1.0
        } else if m == 0.5 {
            0.5
        } else {
            0.0
        };
        count += 1;
    }
    hits / count.max(1) as f64
}

/// Result of a GPM training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub history: TrainHistory,
}

fn check_dataset_shape(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    Ok(())
}

pub(crate) fn initial_model(dataset: &Dataset) -> Result<GpmModel> {
    let t = &dataset.meta.task;
    GpmModel::zeros(t.vocab, t.thought_len, t.dim)
}

/// Full DWRL loop; `use_misalignment = false` gives the ablation without `p̂`.
pub fn train_dwrl_with(
    config: &TrainConfig,
    dataset: &Dataset,
    use_misalignment: bool,
) -> Result<TrainOutcome<GpmModel>> {
    config.validate()?;
    check_dataset_shape(dataset)?;
    let mut state = TrainState::new(initial_model(dataset)?);
    let opts = StepOptions::from_config(config, use_misalignment);
    let root = SeedStream::new(config.seed);
    let all_pairs: Vec<&PreferencePair> = dataset.pairs.iter().collect();

    for epoch in 0..config.epochs {
        let order = shuffled_order(dataset.len(), &root, epoch);
        for (chunk_idx, chunk) in order.chunks(config.rollout_batch).enumerate() {
            let pairs: Vec<&PreferencePair> = chunk.iter().map(|&i| &dataset.pairs[i]).collect();
            state.refresh_snapshot();
            let stream = root.path(&[1, epoch as u64, chunk_idx as u64]);
            let rolled = rollout(&state, &pairs, config.group_size, &stream)?;
            let entropies: Vec<f64> = pairs
                .par_iter()
                .zip(&rolled)
                .map(|(p, w)| {
                    let side = |ctx: &FeatureVector, g: &ThoughtGroup| -> f64 {
                        g.thoughts
                            .iter()
                            .map(|t| state.old_model.mean_step_entropy(ctx, &t.tokens))
                            .sum()
                    };
                    (side(&p.ctx_plus, &w.group_plus) + side(&p.ctx_minus, &w.group_minus))
                        / (w.group_plus.len() + w.group_minus.len()) as f64
                })
                .collect();

            for (mb_idx, mb) in pairs.chunks(config.train_batch).enumerate() {
                let start = mb_idx * config.train_batch;
                let weights = &rolled[start..start + mb.len()];
                score_step(&mut state, mb, weights, config.learning_rate, &opts)?;
                let refreshed = recompute_weights(&state.model, mb, weights)?;
                thought_step(&mut state, mb, &refreshed, config.thought_learning_rate, &opts)?;
                state.step += 1;
                let n = mb.len() as f64;
                state.history.records.push(HistoryRecord {
                    step: state.step,
                    epoch,
                    exact_loss: mean_exact_loss(&state.model, mb, config.exact_loss_cap),
                    batch_accuracy: preference_accuracy(weights.iter().map(|w| w.misalignment)),
                    mean_misalignment: Some(weights.iter().map(|w| w.misalignment).sum::<f64>() / n),
                    mean_entropy: Some(entropies[start..start + mb.len()].iter().sum::<f64>() / n),
                });
            }
        }
        state
            .history
            .epoch_exact_loss
            .push(mean_exact_loss(&state.model, &all_pairs, config.exact_loss_cap));
    }
    Ok(TrainOutcome {
        model: state.model,
        history: state.history,
    })
}

pub fn train_dwrl(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome<GpmModel>> {
    train_dwrl_with(config, dataset, true)
}

/// DWRL with the misalignment weight replaced by 1 in both steps.
pub fn ablation_no_misalignment(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome<GpmModel>> {
    train_dwrl_with(config, dataset, false)
}

/// One fixed thought per response, drawn once from a frozen policy.
///
/// The thought for a response is a function of its features and the seed, so
/// training and evaluation see the same thought for the same response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenThoughts {
    pub policy: GpmModel,
    pub seed: u64,
}

impl FrozenThoughts {
    pub fn new(policy: GpmModel, seed: u64) -> Self {
        Self { policy, seed }
    }

    pub fn thought_for(&self, ctx: &FeatureVector) -> Thought {
        let mut stream = SeedStream::new(self.seed).child(0x5052_4546);
        for v in ctx.values() {
            stream = stream.child(v.to_bits());
        }
        self.policy
            .sample_thoughts(ctx, 1, &stream)
            .expect("frozen policy matches the feature dimension")
            .remove(0)
    }
}

/// Trains only the answer head on prefilled thoughts with the pair loss
/// `-log(π⁺/(π⁺+π⁻))` of the single fixed thoughts.
pub fn ablation_prefilled_thoughts(
    config: &TrainConfig,
    dataset: &Dataset,
    frozen: &FrozenThoughts,
) -> Result<TrainOutcome<GpmModel>> {
    config.validate()?;
    check_dataset_shape(dataset)?;
    let mut state = TrainState::new(frozen.policy.clone());
    let opts = StepOptions::from_config(config, true);
    let root = SeedStream::new(config.seed);
    let fixed: Vec<(Thought, Thought)> = dataset
        .pairs
        .par_iter()
        .map(|p| (frozen.thought_for(&p.ctx_plus), frozen.thought_for(&p.ctx_minus)))
        .collect();

    for epoch in 0..config.epochs {
        let order = shuffled_order(dataset.len(), &root, epoch);
        for mb_idx in order.chunks(config.train_batch) {
            let mb: Vec<&PreferencePair> = mb_idx.iter().map(|&i| &dataset.pairs[i]).collect();
            let weights = mb_idx
                .par_iter()
                .map(|&i| {
                    let p = &dataset.pairs[i];
                    DualWeights::new(
                        ThoughtGroup::score(&state.model, &p.ctx_plus, vec![fixed[i].0.clone()])?,
                        ThoughtGroup::score(&state.model, &p.ctx_minus, vec![fixed[i].1.clone()])?,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            score_step(&mut state, &mb, &weights, config.learning_rate, &opts)?;
            state.step += 1;
            let n = mb.len() as f64;
            state.history.records.push(HistoryRecord {
                step: state.step,
                epoch,
                exact_loss: None,
                batch_accuracy: preference_accuracy(weights.iter().map(|w| w.misalignment)),
                mean_misalignment: Some(weights.iter().map(|w| w.misalignment).sum::<f64>() / n),
                mean_entropy: None,
            });
        }
        state.history.epoch_exact_loss.push(None);
    }
    Ok(TrainOutcome {
        model: state.model,
        history: state.history,
    })
}
