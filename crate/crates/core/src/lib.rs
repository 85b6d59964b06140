//! Elicits per-feature Gaussian priors from a language model's token
//! probabilities, fits Bayesian logistic regression under those priors and
//! benchmarks the fits on quantile-shifted tabular splits.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dataset`] loads CSV files, one-hot encodes and standardizes them, and
//!   builds the covariate-shift train splits.
//! * [`probe`] renders prompt templates and scores the "positive" and
//!   "negative" continuations through a pluggable backend.
//! * [`priors`] turns probe measurements into coefficient priors.
//! * [`inference`] holds the posterior, the NUTS sampler, the Laplace engine
//!   and plain maximum-likelihood fitting.
//! * [`eval`] computes AUC and gap-closed metrics and runs experiments and
//!   hyperparameter sweeps.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod inference;
pub mod math;
pub mod priors;
pub mod probe;

pub use dataset::{
    apply_split, enumerate_splits, load_csv, preprocess, DatasetConfig, EvalMode, FeatureKind,
    FeatureMeta, PreprocessOptions, RawDataset, ShiftStrategy, SplitConfig, SplitSpec,
    TabularDataset,
};
pub use error::{Error, ErrorCategory, Result};
pub use eval::{auc, gap_closed, Condition, EvalResult};
pub use inference::{
    laplace_fit, mle_fit, nuts_sample, Coefficients, LaplaceFit, LogDensity, LogisticPosterior,
    PosteriorDraws, Predictor, SamplerConfig,
};
pub use priors::{
    baseline_priors, elicit_prior, elicit_prior_entropy, BaselineKind, ElicitationConfig,
    FeaturePrior, PriorDist, PriorSet,
};
pub use probe::{
    preference_score, MockBackend, ProbeCache, ProbeMeasurement, Prober, ScoreBackend, TemplateSet,
};
