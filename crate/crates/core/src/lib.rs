//! Joint automatic relevance determination for Bayesian linear regression.
//!
//! Weight precisions `gamma` and per-sample noise variances `lambda` are
//! learned together by maximizing the marginal likelihood, which yields models
//! that are sparse in features and robust to contaminated samples.

pub mod data;
pub mod datagen;
pub mod evaluation;
pub mod features;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;

pub use data::Dataset;
pub use error::{ArdError, Result};
pub use model::{
    compute_posterior, lambda_base, nll_dual, nll_grad, nll_primal, predict, ArdState, Evidence,
    LambdaBasePolicy, NoiseModel, Prediction, Route, WeightPosterior,
};
pub use pipeline::{train, Metrics, PipelineConfig, TrainedModel, Training};
pub use optim::{fit, FitConfig, FitFailure, FitResult, LambdaUpdate, Method, NoiseMode};
