//! The self-contained `result.json` written by `fit`.

use std::collections::BTreeMap;

use jointard::features::{FeatureMapSpec, StandardizerStats};
use jointard::{ArdState, Metrics, NoiseMode, NoiseModel, TrainedModel, Training, WeightPosterior};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Fitted parameters plus the preprocessing needed to apply them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub standardizer: StandardizerStats,
    /// Feature map with lengthscales resolved.
    pub features: FeatureMapSpec,
    pub centers: Option<Vec<Vec<f64>>>,
    pub mu: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub noise_mode: NoiseMode,
    /// One entry per training sample, or a single shared value.
    pub lambda: Vec<f64>,
    pub lambda_base: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub converged: bool,
    pub iterations: usize,
    pub final_nll: Option<f64>,
    pub ess_theta: f64,
    pub ess_y: f64,
    pub route: String,
    pub threads: usize,
    pub inner_warnings: usize,
    /// Training rows corrupted by the configured contamination.
    pub contaminated: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub config: RunConfig,
    pub model: ModelRecord,
    pub summary: Summary,
    /// Hold-out metrics when a test set was given.
    pub metrics: Option<Metrics>,
    pub timing_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelRecord {
    pub fn from_model(m: &TrainedModel) -> Self {
        let (noise_mode, lambda) = match &m.state.noise {
            NoiseModel::Homoscedastic(l) => (NoiseMode::Homo, vec![*l]),
            NoiseModel::Heteroscedastic(v) => (NoiseMode::Hetero, v.iter().copied().collect()),
        };
        Self {
            standardizer: m.stats.clone(),
            features: m.features.clone(),
            centers: m.centers.clone(),
            mu: m.posterior.mu.iter().copied().collect(),
            cov: rows(&m.posterior.cov),
            gamma: m.state.gamma.iter().copied().collect(),
            noise_mode,
            lambda,
            lambda_base: m.lambda_base,
            n_train: m.n_train,
        }
    }

    pub fn to_model(&self) -> CliResult<TrainedModel> {
        let d = self.mu.len();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) || self.gamma.len() != d {
            return Err(CliError::input("model record: mu, cov and gamma disagree in size"));
        }
        let noise = match self.noise_mode {
            NoiseMode::Homo if self.lambda.len() == 1 => NoiseModel::Homoscedastic(self.lambda[0]),
            NoiseMode::Hetero if self.lambda.len() == self.n_train => {
                NoiseModel::Heteroscedastic(DVector::from_vec(self.lambda.clone()))
            }
            _ => return Err(CliError::input("model record: lambda length does not match noise_mode")),
        };
        Ok(TrainedModel {
            stats: self.standardizer.clone(),
            features: self.features.clone(),
            centers: self.centers.clone(),
            posterior: WeightPosterior {
                mu: DVector::from_vec(self.mu.clone()),
                cov: DMatrix::from_fn(d, d, |i, j| self.cov[i][j]),
            },
            state: ArdState::new(DVector::from_vec(self.gamma.clone()), noise)?,
            lambda_base: self.lambda_base,
            n_train: self.n_train,
        })
    }
}

impl ResultRecord {
    pub fn new(config: RunConfig, t: &Training, metrics: Option<Metrics>, timing_seconds: f64) -> CliResult<Self> {
        let versions = BTreeMap::from([("jointard".to_string(), env!("CARGO_PKG_VERSION").to_string())]);
        Ok(Self {
            config,
            model: ModelRecord::from_model(&t.model),
            summary: Summary {
                converged: t.fit.converged,
                iterations: t.fit.iterations_run,
                final_nll: t.fit.final_nll(),
                ess_theta: t.model.ess_theta()?,
                ess_y: t.model.ess_y()?,
                route: format!("{:?}", t.fit.route).to_lowercase(),
                threads: t.fit.threads,
                inner_warnings: t.fit.inner_warnings(),
                contaminated: t.contaminated.clone(),
            },
            metrics,
            timing_seconds,
            versions,
        })
    }
}
