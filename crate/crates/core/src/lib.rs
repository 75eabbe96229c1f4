//! Dual-weighted policy-gradient training of thought-conditioned preference
//! models on a fully enumerable toy model family.
//!
//! - [`model`]: the generative preference model (thought policy and gated answer head)
//! - [`estimators`]: pair losses, exact enumeration oracles, the dual-weighted
//!   gradient estimator and GRPO objectives
//! - [`training`]: the alternating scoring/thought update loop and its ablations
//! - [`baselines`]: Bradley–Terry and GRPO baselines
//! - [`data`]: synthetic channel-cue preference data and its file format
//! - [`eval`]: accuracy metrics and the comparison harness
//! - [`verify`]: finite-difference, enumeration and consistency suites

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod model;
pub mod pairwise;
pub(crate) mod policy;
pub mod rng;
pub mod training;
pub mod verify;

pub use config::RunConfig;
pub use data::{Dataset, LabelMode, Split, SyntheticTask};
pub use error::{Error, Result};
pub use estimators::{
    BaselineScorer, DualWeights, PairEstimate, PreferencePair, ThoughtGroup, Verdict,
};
pub use eval::{ComparisonTable, EvalReport, TrainedModel};
pub use model::{FeatureVector, GpmModel, ParamVector, Thought};
pub use rng::SeedStream;
pub use training::{Method, TrainConfig, TrainHistory};
