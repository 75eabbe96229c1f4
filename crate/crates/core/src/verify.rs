//! Numerical verification suites: finite differences against analytic
//! gradients, enumeration oracles against Monte Carlo estimators, and exact
//! identities of the weighting and metric functions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_channel_cue, Split, SyntheticTask};
use crate::error::Result;
use crate::estimators::{
    dwrl_gradient_estimate, exact_gradient, exact_loss, grpo_advantages, misalignment_weight,
    self_normalized_weights, DualWeights, PreferencePair, ThoughtGroup,
};
use crate::eval::{clip_accuracy, eval_pointwise, report_from_orders};
use crate::model::{enumerate_thoughts, FeatureVector, GpmModel, ParamVector, Thought};
use crate::rng::SeedStream;
use crate::training::{
    recompute_weights, rollout, score_gradient, score_objective, score_step, thought_gradient,
    thought_objective, thought_step, MinusGroupSign, StepOptions, TrainState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail,
        }
    }

    fn flag(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            measured: if passed { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail,
        }
    }

    /// `PASS name measured=… tol=… (detail)`
    pub fn line(&self) -> String {
        format!(
            "{} {} measured={:.3e} tol={:.3e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub seed: u64,
    pub gradient_models: usize,
    pub weight_inputs: usize,
    pub mc_draws: usize,
    pub descent_iterations: usize,
    pub descent_learning_rate: f64,
    pub descent_group_size: usize,
    pub descent_pairs: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_models: 100,
            weight_inputs: 10_000,
            mc_draws: 100_000,
            descent_iterations: 20,
            descent_learning_rate: 1e-3,
            descent_group_size: 4,
            descent_pairs: 16,
            fd_step: 1e-5,
            fd_tolerance: 1e-5,
        }
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference<F>(x: &ParamVector, h: f64, f: F) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    let values = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            Ok((f(&up)? - f(&down)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ParamVector::from_vec(values))
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, 1e-6)`.
pub fn relative_error(a: &ParamVector, b: &ParamVector) -> f64 {
    a.sub(b).norm() / a.norm().max(b.norm()).max(1e-6)
}

fn random_ctx<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> FeatureVector {
    FeatureVector::new((0..dim).map(|_| rng.gen_range(-scale..=scale)).collect())
        .expect("finite features")
}

fn random_pair<R: Rng>(id: usize, dim: usize, rng: &mut R) -> PreferencePair {
    PreferencePair::new(format!("verify-{id}"), random_ctx(dim, 1.5, rng), random_ctx(dim, 1.5, rng))
        .expect("matching dimensions")
}

/// Analytic pair-loss gradient against finite differences of the exact loss,
/// over random small models.
pub fn check_gradient_identity(settings: &VerifySettings) -> Result<CheckResult> {
    let root = SeedStream::new(settings.seed).child(11);
    let errors = (0..settings.gradient_models)
        .map(|m| {
            let mut rng = root.child(m as u64).rng();
            let vocab = rng.gen_range(2..=4);
            let thought_len = rng.gen_range(1..=2);
            let dim = rng.gen_range(vocab..=8);
            let model = GpmModel::random(vocab, thought_len, dim, 1.0, &mut rng)?;
            let pair = random_pair(m, dim, &mut rng);
            let cap = vocab.pow(thought_len as u32);
            let analytic = exact_gradient(&model, &pair, cap)?;
            let fd = central_difference(model.params(), settings.fd_step, |p| {
                Ok(exact_loss(&model.with_params(p.clone()), &pair, cap)?.loss)
            })?;
            Ok(relative_error(&analytic, &fd))
        })
        .collect::<Result<Vec<f64>>>()?;
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Ok(CheckResult::at_most(
        "gradient-identity",
        worst,
        settings.fd_tolerance,
        format!("max relative error over {} models", errors.len()),
    ))
}

/// All multisets of size `n` over `0..vocab` as count vectors.
fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    (0..=n)
        .flat_map(|first| {
            compositions(n - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Groups of `n` thoughts with their probabilities, one entry per multiset.
fn multiset_groups(
    model: &GpmModel,
    ctx: &FeatureVector,
    thoughts: &[Vec<usize>],
    n: usize,
) -> Result<Vec<(f64, ThoughtGroup)>> {
    let singles: Vec<Thought> = thoughts
        .iter()
        .map(|t| model.thought(ctx, t.clone()))
        .collect::<Result<_>>()?;
    compositions(n, thoughts.len())
        .into_iter()
        .map(|counts| {
            let mut ln_p = ln_factorial(n);
            let mut group = Vec::with_capacity(n);
            for (single, &c) in singles.iter().zip(&counts) {
                ln_p += c as f64 * single.logprob - ln_factorial(c);
                group.extend(std::iter::repeat_n(single.clone(), c));
            }
            Ok((ln_p.exp(), ThoughtGroup::score(model, ctx, group)?))
        })
        .collect()
}

/// `E[dwrl_gradient_estimate]` with both groups drawn i.i.d. from the policy,
/// computed by enumerating multisets.
pub fn enumerated_estimate_mean(model: &GpmModel, pair: &PreferencePair, n: usize, cap: usize) -> Result<ParamVector> {
    let thoughts = enumerate_thoughts(model.vocab(), model.thought_len(), cap)?;
    let plus = multiset_groups(model, &pair.ctx_plus, &thoughts, n)?;
    let minus = multiset_groups(model, &pair.ctx_minus, &thoughts, n)?;
    let parts = plus
        .par_iter()
        .map(|(wp, gp)| {
            let mut acc = ParamVector::zeros(model.param_count());
            for (wm, gm) in &minus {
                let weights = DualWeights::new(gp.clone(), gm.clone())?;
                acc.add_scaled(&dwrl_gradient_estimate(model, pair, &weights), wp * wm);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::sum_all(model.param_count(), &parts))
}

/// The same expectation by enumerating ordered tuples; exponential in `n`.
pub fn enumerated_estimate_mean_tuples(
    model: &GpmModel,
    pair: &PreferencePair,
    n: usize,
    cap: usize,
) -> Result<ParamVector> {
    let thoughts = enumerate_thoughts(model.vocab(), model.thought_len(), cap)?;
    let side = |ctx: &FeatureVector| -> Result<Vec<(f64, ThoughtGroup)>> {
        let singles: Vec<Thought> = thoughts
            .iter()
            .map(|t| model.thought(ctx, t.clone()))
            .collect::<Result<_>>()?;
        enumerate_thoughts(singles.len(), n, usize::MAX)?
            .into_iter()
            .map(|idx| {
                let group: Vec<Thought> = idx.iter().map(|&i| singles[i].clone()).collect();
                let p = group.iter().map(|t| t.logprob).sum::<f64>().exp();
                Ok((p, ThoughtGroup::score(model, ctx, group)?))
            })
            .collect()
    };
    let plus = side(&pair.ctx_plus)?;
    let minus = side(&pair.ctx_minus)?;
    let mut total = ParamVector::zeros(model.param_count());
    for (wp, gp) in &plus {
        for (wm, gm) in &minus {
            let weights = DualWeights::new(gp.clone(), gm.clone())?;
            total.add_scaled(&dwrl_gradient_estimate(model, pair, &weights), wp * wm);
        }
    }
    Ok(total)
}

/// Per-component mean and standard error of `draws` Monte Carlo estimates.
pub fn monte_carlo_estimate(
    model: &GpmModel,
    pair: &PreferencePair,
    n: usize,
    draws: usize,
    stream: &SeedStream,
) -> Result<(ParamVector, ParamVector)> {
    const CHUNK: usize = 1000;
    let len = model.param_count();
    let chunks = draws.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; len];
            let mut sq = vec![0.0; len];
            for d in c * CHUNK..((c + 1) * CHUNK).min(draws) {
                let s = stream.child(d as u64);
                let plus = model.sample_thoughts(&pair.ctx_plus, n, &s.child(0))?;
                let minus = model.sample_thoughts(&pair.ctx_minus, n, &s.child(1))?;
                let weights = DualWeights::new(
                    ThoughtGroup::score(model, &pair.ctx_plus, plus)?,
                    ThoughtGroup::score(model, &pair.ctx_minus, minus)?,
                )?;
                let g = dwrl_gradient_estimate(model, pair, &weights);
                for (i, v) in g.as_slice().iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
            }
            Ok((sum, sq))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = vec![0.0; len];
    let mut sq = vec![0.0; len];
    for (s, q) in &parts {
        for i in 0..len {
            sum[i] += s[i];
            sq[i] += q[i];
        }
    }
    let m = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sq
        .iter()
        .zip(&mean)
        .map(|(q, mu)| ((q / m - mu * mu).max(0.0) * m / (m - 1.0) / m).sqrt())
        .collect();
    Ok((ParamVector::from_vec(mean), ParamVector::from_vec(se)))
}

/// Bias of the dual-weighted estimator as a function of group size, and a
/// Monte Carlo check of the enumerated expectation.
pub fn check_estimator_consistency(settings: &VerifySettings) -> Result<Vec<CheckResult>> {
    let mut rng = SeedStream::new(settings.seed).child(12).rng();
    let (vocab, thought_len, dim) = (3, 1, 4);
    let cap = 3;
    let model = GpmModel::random(vocab, thought_len, dim, 1.0, &mut rng)?;
    let pair = random_pair(0, dim, &mut rng);
    let exact = exact_gradient(&model, &pair, cap)?;

    let sizes = [1usize, 2, 4, 8];
    let means = sizes
        .iter()
        .map(|&n| enumerated_estimate_mean(&model, &pair, n, cap))
        .collect::<Result<Vec<_>>>()?;
    let bias: Vec<f64> = means.iter().map(|m| m.sub(&exact).norm()).collect();
    let decreasing = bias.windows(2).all(|w| w[1] < w[0]);
    let ratio = bias[3] / bias[0];

    let mut tuple_err: f64 = 0.0;
    for (k, &n) in sizes.iter().enumerate().take(3) {
        let tuples = enumerated_estimate_mean_tuples(&model, &pair, n, cap)?;
        tuple_err = tuple_err.max(relative_error(&tuples, &means[k]));
    }

    let (mc_mean, mc_se) = monte_carlo_estimate(&model, &pair, 4, settings.mc_draws, &SeedStream::new(settings.seed).child(13))?;
    let worst_z = mc_mean
        .as_slice()
        .iter()
        .zip(means[2].as_slice())
        .zip(mc_se.as_slice())
        .map(|((m, e), se)| {
            let diff = (m - e).abs();
            if diff <= 1e-12 {
                0.0
            } else if *se == 0.0 {
                f64::INFINITY
            } else {
                diff / se
            }
        })
        .fold(0.0, f64::max);

    let bias_text = bias.iter().map(|b| format!("{b:.4e}")).collect::<Vec<_>>().join(",");
    Ok(vec![
        CheckResult::flag(
            "estimator-bias-decreasing",
            decreasing,
            format!("bias norms for n=1,2,4,8: [{bias_text}]"),
        ),
        CheckResult::at_most("estimator-bias-halved", ratio, 0.5, "bias(8)/bias(1)".into()),
        CheckResult::at_most(
            "estimator-multiset-vs-tuples",
            tuple_err,
            1e-10,
            "multiset vs ordered-tuple enumeration, n=1,2,4".into(),
        ),
        CheckResult::at_most(
            "estimator-monte-carlo",
            worst_z,
            3.0,
            format!("max |mean - expectation| / SE over components, {} draws at n=4", settings.mc_draws),
        ),
    ])
}

fn dummy_group(probs: Vec<f64>) -> Result<ThoughtGroup> {
    let thoughts = probs
        .iter()
        .map(|_| Thought {
            tokens: vec![0],
            logprob: 0.0,
            step_logprobs: vec![0.0],
        })
        .collect();
    ThoughtGroup::new(thoughts, probs)
}

/// Normalization, complement symmetry and monotonicity of the weights.
pub fn check_weight_identities(settings: &VerifySettings) -> Result<Vec<CheckResult>> {
    let root = SeedStream::new(settings.seed).child(14);
    let rows = (0..settings.weight_inputs)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.child(i as u64).rng();
            let n = rng.gen_range(1..=8);
            let draw = |rng: &mut crate::rng::StreamRng| -> Vec<f64> {
                (0..n).map(|_| rng.gen_range(1e-6..1.0 - 1e-6)).collect()
            };
            let plus = draw(&mut rng);
            let minus = draw(&mut rng);
            let norm_err = (self_normalized_weights(&plus)?.iter().sum::<f64>() - 1.0).abs();
            let gp = dummy_group(plus.clone())?;
            let gm = dummy_group(minus.clone())?;
            let p = misalignment_weight(&gp, &gm)?;
            let complement_err = (p + misalignment_weight(&gm, &gp)? - 1.0).abs();
            let j = rng.gen_range(0..n);
            let mut more_minus = minus.clone();
            more_minus[j] = (minus[j] + rng.gen_range(0.0..1.0) * (1.0 - minus[j])).min(1.0 - 1e-6);
            let mut more_plus = plus.clone();
            more_plus[j] = (plus[j] + rng.gen_range(0.0..1.0) * (1.0 - plus[j])).min(1.0 - 1e-6);
            let up = misalignment_weight(&gp, &dummy_group(more_minus)?)?;
            let down = misalignment_weight(&dummy_group(more_plus)?, &gm)?;
            let monotone = up >= p && down <= p;
            Ok((norm_err, complement_err, monotone))
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let comp = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let violations = rows.iter().filter(|r| !r.2).count();
    Ok(vec![
        CheckResult::at_most("weights-sum-to-one", norm, 1e-12, format!("{} inputs", rows.len())),
        CheckResult::at_most("misalignment-complement", comp, 1e-12, format!("{} inputs", rows.len())),
        CheckResult::flag(
            "misalignment-monotone",
            violations == 0,
            format!("{violations} violations over {} perturbation pairs", rows.len()),
        ),
    ])
}

fn block_is_zero(g: &ParamVector, range: std::ops::Range<usize>) -> bool {
    g.as_slice()[range].iter().all(|&v| v == 0.0)
}

fn alternating_fixture(seed: u64) -> Result<(GpmModel, Vec<PreferencePair>)> {
    let mut rng = SeedStream::new(seed).child(15).rng();
    let model = GpmModel::random(3, 2, 6, 0.5, &mut rng)?;
    let pairs = (0..6).map(|i| random_pair(i, 6, &mut rng)).collect();
    Ok((model, pairs))
}

/// Step directions against finite differences of the frozen-coefficient
/// objectives, block separation, and no-ops on zero-advantage groups.
pub fn check_alternating_updates(settings: &VerifySettings) -> Result<Vec<CheckResult>> {
    let (model, pairs) = alternating_fixture(settings.seed)?;
    let batch: Vec<&PreferencePair> = pairs.iter().collect();
    let opts = StepOptions {
        use_misalignment: true,
        clip_epsilon: 0.2,
        minus_group_sign: MinusGroupSign::Descent,
    };
    let state = TrainState::new(model.clone());
    let weights = rollout(&state, &batch, 4, &SeedStream::new(settings.seed).child(16))?;
    let layout = model.layout();

    let sg = score_gradient(&model, &batch, &weights, &opts)?;
    let sfd = central_difference(model.params(), settings.fd_step, |p| {
        Ok(score_objective(&model.with_params(p.clone()), &batch, &weights, &opts))
    })?;
    let score_err = relative_error(&sg, &sfd);

    // Move the policy off the snapshot so the ratios differ from 1.
    let mut rng = SeedStream::new(settings.seed).child(17).rng();
    let mut moved = model.clone();
    for i in layout.policy_block() {
        moved.params_mut()[i] += rng.gen_range(-0.05..0.05);
    }
    let mut thought_err: f64 = 0.0;
    for current in [&model, &moved] {
        let tg = thought_gradient(current, &batch, &weights, &opts)?;
        let tfd = central_difference(current.params(), settings.fd_step, |p| {
            thought_objective(&current.with_params(p.clone()), &batch, &weights, &opts)
        })?;
        thought_err = thought_err.max(relative_error(&tg, &tfd));
    }

    let mut stepped = TrainState::new(model.clone());
    let before = stepped.model.params().clone();
    score_step(&mut stepped, &batch, &weights, 0.1, &opts)?;
    let score_delta = stepped.model.params().sub(&before);
    let score_only_head = block_is_zero(&score_delta, layout.policy_block());
    let mid = stepped.model.params().clone();
    let rescored = recompute_weights(&stepped.model, &batch, &weights)?;
    thought_step(&mut stepped, &batch, &rescored, 0.1, &opts)?;
    let thought_delta = stepped.model.params().sub(&mid);
    let thought_only_policy = block_is_zero(&thought_delta, layout.head_block());
    let both_moved = score_delta.max_abs() > 0.0 && thought_delta.max_abs() > 0.0;

    // A zero head gives every thought the same answer probability 1/2.
    let mut flat = model.clone();
    for i in layout.head_block() {
        flat.params_mut()[i] = 0.0;
    }
    let flat_weights = rollout(&TrainState::new(flat.clone()), &batch, 4, &SeedStream::new(settings.seed).child(18))?;
    let all_zero = flat_weights
        .iter()
        .all(|w| w.group_plus.advantages.iter().chain(&w.group_minus.advantages).all(|&a| a == 0.0));
    let mut flat_state = TrainState::new(flat.clone());
    thought_step(&mut flat_state, &batch, &flat_weights, 0.1, &opts)?;
    let noop = all_zero && flat_state.model.params() == flat.params();

    Ok(vec![
        CheckResult::at_most("score-step-fd", score_err, settings.fd_tolerance, "relative error".into()),
        CheckResult::at_most(
            "thought-step-fd",
            thought_err,
            settings.fd_tolerance,
            "relative error at and off the snapshot".into(),
        ),
        CheckResult::flag(
            "step-block-separation",
            score_only_head && thought_only_policy && both_moved,
            format!("score step head-only={score_only_head}, thought step policy-only={thought_only_policy}"),
        ),
        CheckResult::flag("zero-advantage-noop", noop, format!("all advantages zero={all_zero}")),
    ])
}

/// Alternating iterations on a fixed enumerable batch; reports the largest
/// per-step increase of the summed exact pair loss.
pub fn descent_trace(settings: &VerifySettings) -> Result<Vec<f64>> {
    let task = SyntheticTask {
        vocab: 3,
        thought_len: 2,
        dim: 6,
        ..SyntheticTask::default()
    };
    let data = generate_channel_cue(&task, settings.descent_pairs, Split::Train, settings.seed)?;
    let batch: Vec<&PreferencePair> = data.pairs.iter().collect();
    let mut rng = SeedStream::new(settings.seed).child(19).rng();
    let mut state = TrainState::new(GpmModel::random(3, 2, 6, 0.5, &mut rng)?);
    let opts = StepOptions {
        use_misalignment: true,
        clip_epsilon: 0.2,
        minus_group_sign: MinusGroupSign::Descent,
    };
    let cap = 9;
    let total_loss = |m: &GpmModel| -> Result<f64> {
        batch.iter().map(|p| Ok(exact_loss(m, p, cap)?.loss)).sum()
    };
    let root = SeedStream::new(settings.seed).child(20);
    let mut trace = vec![total_loss(&state.model)?];
    for it in 0..settings.descent_iterations {
        state.refresh_snapshot();
        let weights = rollout(&state, &batch, settings.descent_group_size, &root.child(it as u64))?;
        score_step(&mut state, &batch, &weights, settings.descent_learning_rate, &opts)?;
        let weights = recompute_weights(&state.model, &batch, &weights)?;
        thought_step(&mut state, &batch, &weights, settings.descent_learning_rate, &opts)?;
        state.step += 1;
        trace.push(total_loss(&state.model)?);
    }
    Ok(trace)
}

pub fn check_descent(settings: &VerifySettings) -> Result<CheckResult> {
    let trace = descent_trace(settings)?;
    let worst = trace.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        "descent",
        worst,
        1e-6,
        format!(
            "max per-step loss increase, n={} lr={:e}, loss {:.6} -> {:.6}",
            settings.descent_group_size,
            settings.descent_learning_rate,
            trace[0],
            trace[trace.len() - 1]
        ),
    ))
}

/// Clipping, order averaging, pointwise order invariance and GRPO
/// standardization.
pub fn check_metrics(settings: &VerifySettings) -> Result<Vec<CheckResult>> {
    let clip = clip_accuracy(0.3) == 0.5 && clip_accuracy(0.75) == 0.75;
    let avg = report_from_orders("check", [1.0, 0.0], 2, 0, "");
    let averaging = avg.raw_accuracy == 0.5 && avg.accuracy == 0.5;

    let task = SyntheticTask {
        vocab: 3,
        thought_len: 2,
        dim: 6,
        ..SyntheticTask::default()
    };
    let data = generate_channel_cue(&task, 200, Split::Test, settings.seed)?;
    let mut rng = SeedStream::new(settings.seed).child(21).rng();
    let model = GpmModel::random(3, 2, 6, 1.0, &mut rng)?;
    let base = eval_pointwise("check", &model, &data, 0, "");
    let mut reordered = data.clone();
    reordered.pairs.reverse();
    let mut flipped = data.clone();
    flipped.pairs = data.pairs.iter().map(|p| p.swapped()).collect();
    let same = eval_pointwise("check", &model, &reordered, 0, "") == base;
    let flip = eval_pointwise("check", &model, &flipped, 0, "");
    let complement = (flip.raw_accuracy + base.raw_accuracy - 1.0).abs() <= 1e-12;

    let mut std_err: f64 = 0.0;
    let mut zero_ok = true;
    let root = SeedStream::new(settings.seed).child(22);
    for i in 0..1000u64 {
        let mut rng = root.child(i).rng();
        let n = rng.gen_range(2..=8);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let adv = grpo_advantages(&rewards)?;
        let mean = adv.iter().sum::<f64>() / n as f64;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        std_err = std_err.max(mean.abs()).max((var.sqrt() - 1.0).abs());
        let flat = vec![rewards[0]; n];
        zero_ok &= grpo_advantages(&flat)?.iter().all(|&a| a == 0.0);
    }

    Ok(vec![
        CheckResult::flag("accuracy-floor", clip, "0.3 -> 0.5".into()),
        CheckResult::flag("order-averaging", averaging, "(1.0, 0.0) -> 0.5".into()),
        CheckResult::flag(
            "pointwise-order-invariance",
            same && complement,
            format!("reordered identical={same}, label flip complements={complement}"),
        ),
        CheckResult::at_most("grpo-standardization", std_err, 1e-12, "max |mean|, |std - 1|".into()),
        CheckResult::flag("grpo-zero-variance", zero_ok, "constant rewards give zero advantages".into()),
    ])
}

/// Every suite, in a fixed order.
pub fn run_all(settings: &VerifySettings) -> Result<Vec<CheckResult>> {
    let mut out = vec![check_gradient_identity(settings)?];
    out.extend(check_estimator_consistency(settings)?);
    out.extend(check_weight_identities(settings)?);
    out.extend(check_alternating_updates(settings)?);
    out.push(check_descent(settings)?);
    out.extend(check_metrics(settings)?);
    Ok(out)
}
