//! The joint ARD model: per-weight precisions `gamma` and a noise model that
//! is either one shared variance or one variance per sample.
//!
//! The marginal covariance of the targets is `Σ_y = Λ + X Γ⁻¹ Xᵀ` and every
//! objective here is the full negative log density `-log N(y; 0, Σ_y)`,
//! constants included. Two algebraic routes are available: the primal route
//! factorizes the `n×n` matrix `Σ_y`, the dual route factorizes the `d×d`
//! posterior precision `Γ + Xᵀ Λ⁻¹ X` and recovers everything else through the
//! Woodbury identity.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ArdError, Result};
use crate::linalg::{cholesky_jittered, diag_quadratic_rows, symmetrize};

/// Noise variances: one shared value or one per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Homoscedastic(f64),
    Heteroscedastic(DVector<f64>),
}

impl NoiseModel {
    pub fn is_heteroscedastic(&self) -> bool {
        matches!(self, NoiseModel::Heteroscedastic(_))
    }

    /// Per-sample variances, broadcasting the shared value when homoscedastic.
    pub fn variances(&self, n: usize) -> DVector<f64> {
        match self {
            NoiseModel::Homoscedastic(l) => DVector::from_element(n, *l),
            NoiseModel::Heteroscedastic(v) => v.clone(),
        }
    }

    /// Parameter values as a flat slice-like vector (length 1 when shared).
    pub fn values(&self) -> Vec<f64> {
        match self {
            NoiseModel::Homoscedastic(l) => vec![*l],
            NoiseModel::Heteroscedastic(v) => v.iter().copied().collect(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            NoiseModel::Homoscedastic(l) => check_positive("lambda", std::slice::from_ref(l)),
            NoiseModel::Heteroscedastic(v) => {
                if v.len() != n {
                    return Err(ArdError::input(format!(
                        "heteroscedastic noise has {} variances but the dataset has {n} samples",
                        v.len()
                    )));
                }
                check_positive("lambda", v.as_slice())
            }
        }
    }
}

fn check_positive(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(i) => Err(ArdError::input(format!(
            "{name}[{i}] = {} is not strictly positive and finite",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Current parameter iterate: weight precisions and noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ArdState {
    pub gamma: DVector<f64>,
    pub noise: NoiseModel,
}

impl ArdState {
    pub fn new(gamma: DVector<f64>, noise: NoiseModel) -> Result<Self> {
        check_positive("gamma", gamma.as_slice())?;
        if let NoiseModel::Heteroscedastic(v) = &noise {
            check_positive("lambda", v.as_slice())?;
        } else {
            noise.validate(0)?;
        }
        Ok(Self { gamma, noise })
    }

    /// Constant initial state.
    pub fn constant(d: usize, n: usize, gamma: f64, lambda: f64, heteroscedastic: bool) -> Result<Self> {
        let noise = if heteroscedastic {
            NoiseModel::Heteroscedastic(DVector::from_element(n, lambda))
        } else {
            NoiseModel::Homoscedastic(lambda)
        };
        Self::new(DVector::from_element(d, gamma), noise)
    }

    /// Checks positivity and that dimensions agree with `data`.
    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        if self.gamma.len() != data.d() {
            return Err(ArdError::input(format!(
                "state has {} weight precisions but the dataset has {} features",
                self.gamma.len(),
                data.d()
            )));
        }
        check_positive("gamma", self.gamma.as_slice())?;
        self.noise.validate(data.n())
    }
}

/// Gaussian posterior over the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPosterior {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Predictive mean and variance at one test input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Which matrix to factorize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Factorize `Σ_y` (`n×n`).
    Primal,
    /// Factorize `Γ + Xᵀ Λ⁻¹ X` (`d×d`).
    Dual,
}

impl Route {
    /// Dual when `d <= n`, primal otherwise.
    pub fn auto(n: usize, d: usize) -> Self {
        if d <= n {
            Route::Dual
        } else {
            Route::Primal
        }
    }
}

/// Everything the update rules need at one `(data, state)` pair.
///
/// `Π_y = Σ_y⁻¹` is never formed on the dual route; only the pieces below are.
#[derive(Debug, Clone)]
pub struct Evidence {
    pub posterior: WeightPosterior,
    /// `y - X μ`
    pub residuals: DVector<f64>,
    /// `x_iᵀ Σ_θ x_i` per row.
    pub fitted_var: DVector<f64>,
    /// `[Π_y]_ii`
    pub pi_diag: DVector<f64>,
    /// `Π_y y`
    pub pi_y: DVector<f64>,
    /// `x_jᵀ Π_y x_j` per column.
    pub col_quad: DVector<f64>,
    /// `log|Σ_y|`
    pub log_det: f64,
    /// `yᵀ Π_y y`
    pub quad: f64,
    /// Per-sample noise variances the evidence was computed with.
    pub lambda: DVector<f64>,
    pub route: Route,
    /// Diagonal jitter needed by the factorization (0 when none).
    pub jitter: f64,
}

impl Evidence {
    pub fn compute(data: &Dataset, state: &ArdState, route: Route) -> Result<Self> {
        state.validate_for(data)?;
        match route {
            Route::Dual => Self::dual(data, state),
            Route::Primal => Self::primal(data, state),
        }
    }

    pub fn compute_auto(data: &Dataset, state: &ArdState) -> Result<Self> {
        Self::compute(data, state, Route::auto(data.n(), data.d()))
    }

    fn dual(data: &Dataset, state: &ArdState) -> Result<Self> {
        let x = data.x();
        let y = data.y();
        let lambda = state.noise.variances(data.n());
        let w = lambda.map(|l| 1.0 / l);

        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut precision = x.transpose() * &xw;
        for j in 0..data.d() {
            precision[(j, j)] += state.gamma[j];
        }
        let precision = symmetrize(precision);
        let factor = cholesky_jittered(&precision, "posterior precision (Gamma + X^T Lambda^-1 X)")?;
        let cov = factor.inverse();
        let y_tilde = xw.transpose() * y;
        let mu = factor.solve(&y_tilde);

        let residuals = y - x * &mu;
        let fitted_var = diag_quadratic_rows(x, &cov);
        let pi_diag = DVector::from_fn(data.n(), |i, _| w[i] - w[i] * w[i] * fitted_var[i]);
        let pi_y = residuals.component_mul(&w);
        let col_quad = DVector::from_fn(data.d(), |j, _| {
            let g = state.gamma[j];
            g * (1.0 - g * cov[(j, j)])
        });
        let log_det = factor.log_det() - state.gamma.iter().map(|g| g.ln()).sum::<f64>()
            + lambda.iter().map(|l| l.ln()).sum::<f64>();
        // yᵀΠy = rᵀΛ⁻¹r + μᵀΓμ; both terms are nonnegative, so nothing cancels
        // when some λ_i is tiny.
        let quad = residuals.iter().zip(w.iter()).map(|(r, wi)| wi * r * r).sum::<f64>()
            + mu.iter().zip(state.gamma.iter()).map(|(m, g)| g * m * m).sum::<f64>();

        Ok(Self {
            posterior: WeightPosterior { mu, cov },
            residuals,
            fitted_var,
            pi_diag,
            pi_y,
            col_quad,
            log_det,
            quad,
            lambda,
            route: Route::Dual,
            jitter: factor.jitter,
        })
    }

    fn primal(data: &Dataset, state: &ArdState) -> Result<Self> {
        let x = data.x();
        let y = data.y();
        let lambda = state.noise.variances(data.n());
        let inv_gamma = state.gamma.map(|g| 1.0 / g);

        let mut x_scaled = x.clone();
        for (j, mut col) in x_scaled.column_iter_mut().enumerate() {
            col *= inv_gamma[j];
        }
        let mut sigma_y = &x_scaled * x.transpose();
        for i in 0..data.n() {
            sigma_y[(i, i)] += lambda[i];
        }
        let sigma_y = symmetrize(sigma_y);
        let factor = cholesky_jittered(&sigma_y, "marginal covariance (Lambda + X Gamma^-1 X^T)")?;
        let pi = factor.inverse();
        let pi_y = factor.solve(y);

        let xt_pi = x.transpose() * &pi;
        let xt_pi_x = symmetrize(&xt_pi * x);
        let mu = (x.transpose() * &pi_y).component_mul(&inv_gamma);
        let cov = symmetrize(DMatrix::from_fn(data.d(), data.d(), |i, j| {
            let base = if i == j { inv_gamma[i] } else { 0.0 };
            base - inv_gamma[i] * xt_pi_x[(i, j)] * inv_gamma[j]
        }));

        let residuals = y - x * &mu;
        let fitted_var = diag_quadratic_rows(x, &cov);
        let pi_diag = pi.diagonal();
        let col_quad = xt_pi_x.diagonal();
        let quad = y.dot(&pi_y);

        Ok(Self {
            posterior: WeightPosterior { mu, cov },
            residuals,
            fitted_var,
            pi_diag,
            pi_y,
            col_quad,
            log_det: factor.log_det(),
            quad,
            lambda,
            route: Route::Primal,
            jitter: factor.jitter,
        })
    }

    /// Full negative log marginal likelihood.
    pub fn nll(&self) -> f64 {
        let n = self.residuals.len() as f64;
        0.5 * (n * (2.0 * PI).ln() + self.log_det + self.quad)
    }

    /// `(∂L/∂γ, ∂L/∂λ_i)` with `L` the full negative log marginal likelihood.
    pub fn gradient(&self, data: &Dataset, state: &ArdState) -> NllGradient {
        let xt_alpha = data.x().transpose() * &self.pi_y;
        let grad_gamma = DVector::from_fn(state.gamma.len(), |j, _| {
            let g = state.gamma[j];
            -(self.col_quad[j] - xt_alpha[j] * xt_alpha[j]) / (2.0 * g * g)
        });
        let per_sample = DVector::from_fn(self.pi_diag.len(), |i, _| {
            0.5 * (self.pi_diag[i] - self.pi_y[i] * self.pi_y[i])
        });
        let grad_noise = match state.noise {
            NoiseModel::Homoscedastic(_) => NoiseGradient::Shared(per_sample.sum()),
            NoiseModel::Heteroscedastic(_) => NoiseGradient::PerSample(per_sample),
        };
        NllGradient {
            grad_gamma,
            grad_noise,
        }
    }
}

/// Gradient with respect to the noise parameters, shaped like the noise model.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseGradient {
    Shared(f64),
    PerSample(DVector<f64>),
}

impl NoiseGradient {
    pub fn values(&self) -> Vec<f64> {
        match self {
            NoiseGradient::Shared(g) => vec![*g],
            NoiseGradient::PerSample(v) => v.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllGradient {
    pub grad_gamma: DVector<f64>,
    pub grad_noise: NoiseGradient,
}

/// Weight posterior `Σ_θ = (Γ + XᵀΛ⁻¹X)⁻¹`, `μ_θ = Σ_θ XᵀΛ⁻¹ y`.
pub fn compute_posterior(data: &Dataset, state: &ArdState) -> Result<WeightPosterior> {
    Evidence::compute_auto(data, state).map(|e| e.posterior)
}

/// Negative log marginal likelihood through the `n×n` marginal covariance.
pub fn nll_primal(data: &Dataset, state: &ArdState) -> Result<f64> {
    Evidence::compute(data, state, Route::Primal).map(|e| e.nll())
}

/// Negative log marginal likelihood through the `d×d` posterior precision.
pub fn nll_dual(data: &Dataset, state: &ArdState) -> Result<f64> {
    Evidence::compute(data, state, Route::Dual).map(|e| e.nll())
}

/// Analytic gradient of the negative log marginal likelihood.
pub fn nll_grad(data: &Dataset, state: &ArdState) -> Result<NllGradient> {
    let ev = Evidence::compute_auto(data, state)?;
    Ok(ev.gradient(data, state))
}

/// Predictive distribution at `x_star` with base noise `lambda_base`.
pub fn predict(posterior: &WeightPosterior, lambda_base: f64, x_star: &[f64]) -> Result<Prediction> {
    if !(lambda_base > 0.0 && lambda_base.is_finite()) {
        return Err(ArdError::input(format!(
            "base noise level must be positive, got {lambda_base}"
        )));
    }
    let d = posterior.mu.len();
    if x_star.len() != d {
        return Err(ArdError::input(format!(
            "test input has {} features, posterior has {d}",
            x_star.len()
        )));
    }
    let x = DVector::from_column_slice(x_star);
    let mean = x.dot(&posterior.mu);
    let quad = (&posterior.cov * &x).dot(&x).max(0.0);
    Ok(Prediction {
        mean,
        variance: lambda_base + quad,
    })
}

/// How to collapse learned noise variances into one base level for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaBasePolicy {
    #[default]
    Mean,
    /// Mean of the variances inside the `[q_alpha, q_(1-alpha)]` quantile band.
    TrimmedMean { alpha: f64 },
}

/// Base noise level used for prediction.
pub fn lambda_base(noise: &NoiseModel, policy: LambdaBasePolicy) -> Result<f64> {
    let value = match (noise, policy) {
        (NoiseModel::Homoscedastic(l), LambdaBasePolicy::Mean) => *l,
        (NoiseModel::Homoscedastic(_), LambdaBasePolicy::TrimmedMean { .. }) => {
            return Err(ArdError::input(
                "trimmed-mean base noise requires heteroscedastic noise",
            ))
        }
        (NoiseModel::Heteroscedastic(v), LambdaBasePolicy::Mean) => v.mean(),
        (NoiseModel::Heteroscedastic(v), LambdaBasePolicy::TrimmedMean { alpha }) => {
            if !(0.0..0.5).contains(&alpha) {
                return Err(ArdError::input(format!(
                    "trim fraction must lie in [0, 0.5), got {alpha}"
                )));
            }
            let mut sorted: Vec<f64> = v.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&sorted, alpha);
            let hi = quantile_sorted(&sorted, 1.0 - alpha);
            let kept: Vec<f64> = sorted.iter().copied().filter(|&l| l >= lo && l <= hi).collect();
            if kept.is_empty() {
                return Err(ArdError::input("trimming removed every noise variance"));
            }
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(ArdError::input(format!("base noise level {value} is not positive")));
    }
    Ok(value)
}

/// Linear-interpolation empirical quantile (`(n-1)p` positioning) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
