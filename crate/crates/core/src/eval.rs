//! Preference accuracy with order averaging and the 50% floor, and the
//! method-comparison harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_bt, train_grpo_pairwise, train_grpo_pointwise};
use crate::data::Dataset;
use crate::error::Result;
use crate::estimators::{BaselineScorer, PreferencePair};
use crate::model::{FeatureVector, GpmModel};
use crate::pairwise::PairwiseGpm;
use crate::training::{
    ablation_no_misalignment, ablation_prefilled_thoughts, train_dwrl, FrozenThoughts, Method,
    TrainConfig, TrainHistory,
};

/// Accuracy floor: anything below chance is reported as chance.
pub fn clip_accuracy(raw: f64) -> f64 {
    raw.max(0.5)
}

/// Scores a single response in isolation.
pub trait ResponseScorer: Sync {
    fn score(&self, ctx: &FeatureVector) -> f64;
}

/// Greedy thought, then the answer probability of that thought.
impl ResponseScorer for GpmModel {
    fn score(&self, ctx: &FeatureVector) -> f64 {
        let thought = self.greedy_thought(ctx);
        self.answer_prob(ctx, &thought.tokens)
    }
}

impl ResponseScorer for BaselineScorer {
    fn score(&self, ctx: &FeatureVector) -> f64 {
        BaselineScorer::score(self, ctx)
    }
}

/// A head trained on prefilled thoughts, scored with the same thoughts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefilledScorer {
    pub model: GpmModel,
    pub frozen: FrozenThoughts,
}

impl ResponseScorer for PrefilledScorer {
    fn score(&self, ctx: &FeatureVector) -> f64 {
        let thought = self.frozen.thought_for(ctx);
        self.model.answer_prob(ctx, &thought.tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub accuracy: f64,
    pub raw_accuracy: f64,
    /// `[plus first, minus first]` for pairwise judges.
    pub order_accuracies: Option<[f64; 2]>,
    pub n_test: usize,
    pub seed: u64,
    pub config_digest: String,
}

fn credit(better: f64, worse: f64) -> f64 {
    if better > worse {
        1.0
    } else if better == worse {
        0.5
    } else {
        0.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn pointwise_correctness<S: ResponseScorer + ?Sized>(scorer: &S, pairs: &[PreferencePair]) -> Vec<f64> {
    pairs
        .par_iter()
        .map(|p| credit(scorer.score(&p.ctx_plus), scorer.score(&p.ctx_minus)))
        .collect()
}

/// Pair credit is 1 when the preferred response scores higher, 0.5 on ties.
pub fn eval_pointwise<S: ResponseScorer + ?Sized>(
    method: &str,
    scorer: &S,
    dataset: &Dataset,
    seed: u64,
    config_digest: &str,
) -> EvalReport {
    let raw = mean(&pointwise_correctness(scorer, &dataset.pairs));
    EvalReport {
        method: method.to_string(),
        accuracy: clip_accuracy(raw),
        raw_accuracy: raw,
        order_accuracies: None,
        n_test: dataset.len(),
        seed,
        config_digest: config_digest.to_string(),
    }
}

/// Accuracy of a judge in the two presentation orders.
pub fn pairwise_order_accuracies(judge: &PairwiseGpm, pairs: &[PreferencePair]) -> Result<[f64; 2]> {
    let per_pair = pairs
        .par_iter()
        .map(|p| {
            let forward = judge.joint_context(&p.ctx_plus, &p.ctx_minus)?;
            let backward = judge.joint_context(&p.ctx_minus, &p.ctx_plus)?;
            let pf = judge.prob_first(&forward, &judge.greedy_thought(&forward));
            let pb = judge.prob_first(&backward, &judge.greedy_thought(&backward));
            Ok((credit(pf, 0.5), credit(0.5, pb)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let forward: Vec<f64> = per_pair.iter().map(|x| x.0).collect();
    let backward: Vec<f64> = per_pair.iter().map(|x| x.1).collect();
    Ok([mean(&forward), mean(&backward)])
}

/// Averages the two presentation orders, then applies the floor.
pub fn report_from_orders(method: &str, orders: [f64; 2], n_test: usize, seed: u64, config_digest: &str) -> EvalReport {
    let raw = (orders[0] + orders[1]) / 2.0;
    EvalReport {
        method: method.to_string(),
        accuracy: clip_accuracy(raw),
        raw_accuracy: raw,
        order_accuracies: Some(orders),
        n_test,
        seed,
        config_digest: config_digest.to_string(),
    }
}

pub fn eval_pairwise(
    method: &str,
    judge: &PairwiseGpm,
    dataset: &Dataset,
    seed: u64,
    config_digest: &str,
) -> Result<EvalReport> {
    let orders = pairwise_order_accuracies(judge, &dataset.pairs)?;
    Ok(report_from_orders(method, orders, dataset.len(), seed, config_digest))
}

/// A trained model of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainedModel {
    Gpm { method: Method, model: GpmModel },
    Baseline { scorer: BaselineScorer },
    Pairwise { judge: PairwiseGpm },
    Prefilled { scorer: PrefilledScorer },
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Gpm { method, .. } => *method,
            TrainedModel::Baseline { .. } => Method::Bt,
            TrainedModel::Pairwise { .. } => Method::GrpoPair,
            TrainedModel::Prefilled { .. } => Method::Prefilled,
        }
    }

    pub fn evaluate(&self, dataset: &Dataset, seed: u64, config_digest: &str) -> Result<EvalReport> {
        let name = self.method().name();
        Ok(match self {
            TrainedModel::Gpm { model, .. } => eval_pointwise(name, model, dataset, seed, config_digest),
            TrainedModel::Baseline { scorer } => eval_pointwise(name, scorer, dataset, seed, config_digest),
            TrainedModel::Prefilled { scorer } => eval_pointwise(name, scorer, dataset, seed, config_digest),
            TrainedModel::Pairwise { judge } => eval_pairwise(name, judge, dataset, seed, config_digest)?,
        })
    }
}

/// Trains one method on `dataset`.
pub fn train_method(method: Method, config: &TrainConfig, dataset: &Dataset) -> Result<(TrainedModel, TrainHistory)> {
    Ok(match method {
        Method::Dwrl | Method::NoMisalign => {
            let out = if method == Method::Dwrl {
                train_dwrl(config, dataset)?
            } else {
                ablation_no_misalignment(config, dataset)?
            };
            (TrainedModel::Gpm { method, model: out.model }, out.history)
        }
        Method::GrpoPoint => {
            let out = train_grpo_pointwise(config, dataset)?;
            (TrainedModel::Gpm { method, model: out.model }, out.history)
        }
        Method::Bt => {
            let out = train_bt(config, dataset)?;
            (TrainedModel::Baseline { scorer: out.model }, out.history)
        }
        Method::GrpoPair => {
            let out = train_grpo_pairwise(config, dataset)?;
            (TrainedModel::Pairwise { judge: out.model }, out.history)
        }
        Method::Prefilled => {
            let frozen = FrozenThoughts::new(crate::training::initial_model(dataset)?, config.seed);
            let out = ablation_prefilled_thoughts(config, dataset, &frozen)?;
            (
                TrainedModel::Prefilled {
                    scorer: PrefilledScorer { model: out.model, frozen },
                },
                out.history,
            )
        }
    })
}

/// Median of accuracies for one method across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub median_raw_accuracy: f64,
    pub median_accuracy: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reports: Vec<EvalReport>,
    pub summaries: Vec<MethodSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl ComparisonTable {
    pub const CSV_HEADER: &'static str = "method,seed,raw_accuracy,accuracy,n_test";

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method.name())
    }

    /// One row per (method, seed), then one `median` row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                r.method, r.seed, r.raw_accuracy, r.accuracy, r.n_test
            ));
        }
        for s in &self.summaries {
            let n_test = self.reports.iter().find(|r| r.method == s.method).map_or(0, |r| r.n_test);
            out.push_str(&format!(
                "{},median,{:.6},{:.6},{}\n",
                s.method, s.median_raw_accuracy, s.median_accuracy, n_test
            ));
        }
        out
    }
}

/// Trains and evaluates every `(method, seed)` combination.
pub fn run_comparison(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    methods: &[Method],
    seeds: &[u64],
    config_digest: &str,
) -> Result<ComparisonTable> {
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let cfg = TrainConfig { seed, ..config.clone() };
            let (model, _) = train_method(method, &cfg, train)?;
            model.evaluate(test, seed, config_digest)
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = methods
        .iter()
        .map(|m| {
            let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.method == m.name()).collect();
            MethodSummary {
                method: m.name().to_string(),
                median_raw_accuracy: median(&rows.iter().map(|r| r.raw_accuracy).collect::<Vec<_>>()),
                median_accuracy: median(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
                seeds: rows.len(),
            }
        })
        .collect();
    Ok(ComparisonTable { reports, summaries })
}
