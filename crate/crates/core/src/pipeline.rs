//! End-to-end model: standardize on the training split, build features, fit,
//! and predict on the original target scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::datagen::{contaminate_targets, ContaminationSpec};
use crate::error::{ArdError, Result};
use crate::evaluation::{ess, predictive_nll, rmse, RelevanceScores};
use crate::features::{map_standardized, standardize_fit, FeatureMapSpec, StandardizerStats};
use crate::model::{lambda_base, predict, ArdState, LambdaBasePolicy, Prediction, WeightPosterior};
use crate::optim::{fit, FitConfig, FitFailure, FitResult};

/// Everything needed to train a model from raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    pub features: FeatureMapSpec,
    pub lambda_base: LambdaBasePolicy,
    /// Applied to the standardized training targets only.
    pub contamination: Option<ContaminationSpec>,
}

/// A fitted model together with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub stats: StandardizerStats,
    /// Feature map with lengthscales filled in.
    pub features: FeatureMapSpec,
    /// Standardized training rows, kept for the RBF basis.
    pub centers: Option<Vec<Vec<f64>>>,
    pub posterior: WeightPosterior,
    pub state: ArdState,
    /// Base noise variance on the standardized scale.
    pub lambda_base: f64,
    pub n_train: usize,
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct Training {
    pub model: TrainedModel,
    pub fit: FitResult,
    /// Training rows corrupted by the configured contamination.
    pub contaminated: Vec<usize>,
    /// The featurized, standardized training set the model was fitted on.
    pub design: Dataset,
}

/// Hold-out metrics on the original target scale plus effective support sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub nll: f64,
    pub ess_theta: f64,
    pub ess_y: f64,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

pub fn train(raw: &Dataset, config: &PipelineConfig) -> std::result::Result<Training, FitFailure> {
    let stats = standardize_fit(raw);
    let x_std = stats.transform_x(raw.x())?;
    let features = config.features.resolve(&x_std)?;
    let centers = matches!(features, FeatureMapSpec::RbfBasis { .. }).then(|| x_std.clone());
    let phi = map_standardized(&features, &x_std, centers.as_ref())?;

    let mut y = stats.transform_y(raw.y());
    let mut contaminated = Vec::new();
    if let Some(spec) = &config.contamination {
        let (yc, idx) = contaminate_targets(&y, spec)?;
        y = yc;
        contaminated = idx;
    }
    let design = Dataset::new(phi, y)?;
    let result = fit(&design, &config.fit)?;
    let lb = lambda_base(&result.state.noise, config.lambda_base)?;
    Ok(Training {
        model: TrainedModel {
            stats,
            features,
            centers: centers.as_ref().map(to_rows),
            posterior: result.posterior.clone(),
            state: result.state.clone(),
            lambda_base: lb,
            n_train: raw.n(),
        },
        fit: result,
        contaminated,
        design,
    })
}

impl TrainedModel {
    /// Feature matrix for raw inputs.
    pub fn featurize(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self.stats.transform_x(x_raw)?;
        let centers = self.centers.as_deref().map(from_rows);
        let phi = map_standardized(&self.features, &x, centers.as_ref())?;
        if phi.ncols() != self.posterior.mu.len() {
            return Err(ArdError::input(format!(
                "model expects {} features, the map produced {}",
                self.posterior.mu.len(),
                phi.ncols()
            )));
        }
        Ok(phi)
    }

    /// Predictive means and variances on the original target scale.
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        let phi = self.featurize(x_raw)?;
        phi.row_iter()
            .map(|row| {
                let x: Vec<f64> = row.iter().copied().collect();
                let p = predict(&self.posterior, self.lambda_base, &x)?;
                Ok(Prediction {
                    mean: self.stats.inverse_y(p.mean),
                    variance: self.stats.inverse_variance(p.variance),
                })
            })
            .collect()
    }

    pub fn ess_theta(&self) -> Result<f64> {
        ess(&RelevanceScores::weights(&self.state))
    }

    pub fn ess_y(&self) -> Result<f64> {
        ess(&RelevanceScores::samples(&self.state.noise, self.n_train))
    }

    pub fn evaluate(&self, test: &Dataset) -> Result<Metrics> {
        let preds = self.predict(test.x())?;
        let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        Ok(Metrics {
            rmse: rmse(&means, test.y().as_slice())?,
            nll: predictive_nll(&preds, test.y().as_slice())?,
            ess_theta: self.ess_theta()?,
            ess_y: self.ess_y()?,
        })
    }
}

/// Standardized-scale residuals `y - Φμ` of a training result.
pub fn residuals(design: &Dataset, posterior: &WeightPosterior) -> DVector<f64> {
    design.y() - design.x() * &posterior.mu
}
