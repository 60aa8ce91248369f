//! One-step re-estimation rules for `(gamma, lambda)`.
//!
//! Every rule returns a raw proposal: undamped and unclipped. Values may be
//! zero or infinite (ℓ1 map-back on exact zeros); [`super::stabilize`] makes
//! them usable.

use nalgebra::{DMatrix, DVector};

use super::admm::{double_l1_objective, solve_double_l1, AdmmConfig, AdmmOutcome};
use super::LambdaUpdate;
use crate::data::Dataset;
use crate::error::{ArdError, Result};
use crate::linalg::{cholesky_jittered, diag_quadratic_rows};
use crate::model::{ArdState, Evidence, NoiseGradient, NoiseModel, WeightPosterior};

/// Floor on `μ_j²` in the MacKay precision update.
pub const MACKAY_MU_SQ_FLOOR: f64 = 1e-24;
/// Floor on the homoscedastic MacKay denominator, relative to `n`.
pub const MACKAY_DENOM_FLOOR: f64 = 1e-8;

/// A raw proposal plus what the fit loop records about it.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub state: ArdState,
    /// Weight iterate for IRLS methods.
    pub theta: Option<DVector<f64>>,
    /// Number of degenerate-case guards that fired.
    pub guards: usize,
    /// Inner solver outcome (ℓ1-IRLS only).
    pub inner: Option<AdmmOutcome>,
    /// Inner objective at the returned weights (ℓ1-IRLS only).
    pub surrogate: Option<f64>,
}

impl Proposal {
    fn plain(state: ArdState) -> Self {
        Self {
            state,
            theta: None,
            guards: 0,
            inner: None,
            surrogate: None,
        }
    }
}

fn check_posterior(data: &Dataset, posterior: &WeightPosterior, state: &ArdState) -> Result<()> {
    state.validate_for(data)?;
    let d = data.d();
    if posterior.mu.len() != d || posterior.cov.shape() != (d, d) {
        return Err(ArdError::input("posterior dimensions do not match the dataset"));
    }
    Ok(())
}

fn em_from_parts(
    residuals: &DVector<f64>,
    fitted_var: &DVector<f64>,
    posterior: &WeightPosterior,
    state: &ArdState,
    variant: LambdaUpdate,
) -> ArdState {
    let d = posterior.mu.len();
    let gamma = DVector::from_fn(d, |j, _| {
        1.0 / (posterior.mu[j] * posterior.mu[j] + posterior.cov[(j, j)])
    });
    let n = residuals.len();
    let lambda = state.noise.variances(n);
    let per_sample = DVector::from_fn(n, |i, _| {
        let r2 = residuals[i] * residuals[i];
        match variant {
            LambdaUpdate::Standard => r2 + fitted_var[i],
            LambdaUpdate::Studentized { power } => {
                let h = fitted_var[i] / lambda[i];
                if h >= 1.0 {
                    f64::INFINITY
                } else {
                    r2 / (1.0 - h).powf(power)
                }
            }
        }
    });
    let noise = match state.noise {
        NoiseModel::Homoscedastic(_) => NoiseModel::Homoscedastic(per_sample.mean()),
        NoiseModel::Heteroscedastic(_) => NoiseModel::Heteroscedastic(per_sample),
    };
    ArdState { gamma, noise }
}

/// EM re-estimation: `γ_j ← 1/(μ_j² + Σ_jj)`, `λ_i ← r_i² + x_iᵀΣx_i`
/// (homoscedastic: the sample average of the same quantity).
pub fn em_update(data: &Dataset, posterior: &WeightPosterior, state: &ArdState) -> Result<ArdState> {
    em_update_with(data, posterior, state, LambdaUpdate::Standard)
}

/// EM re-estimation with a selectable noise update.
pub fn em_update_with(
    data: &Dataset,
    posterior: &WeightPosterior,
    state: &ArdState,
    variant: LambdaUpdate,
) -> Result<ArdState> {
    check_posterior(data, posterior, state)?;
    let residuals = data.y() - data.x() * &posterior.mu;
    let fitted_var = diag_quadratic_rows(data.x(), &posterior.cov);
    Ok(em_from_parts(&residuals, &fitted_var, posterior, state, variant))
}

pub(crate) fn em_proposal(ev: &Evidence, state: &ArdState, variant: LambdaUpdate) -> Proposal {
    Proposal::plain(em_from_parts(
        &ev.residuals,
        &ev.fitted_var,
        &ev.posterior,
        state,
        variant,
    ))
}

fn mackay_from_parts(
    residuals: &DVector<f64>,
    fitted_var: &DVector<f64>,
    posterior: &WeightPosterior,
    state: &ArdState,
) -> (ArdState, usize) {
    let d = posterior.mu.len();
    let mut guards = 0;
    let mut well_determined = 0.0;
    let gamma = DVector::from_fn(d, |j, _| {
        let mut num = 1.0 - state.gamma[j] * posterior.cov[(j, j)];
        if num < 0.0 {
            num = 0.0;
            guards += 1;
        }
        well_determined += num;
        let mut mu_sq = posterior.mu[j] * posterior.mu[j];
        if mu_sq < MACKAY_MU_SQ_FLOOR {
            mu_sq = MACKAY_MU_SQ_FLOOR;
            guards += 1;
        }
        num / mu_sq
    });
    let n = residuals.len();
    let noise = match state.noise {
        NoiseModel::Homoscedastic(_) => {
            let floor = MACKAY_DENOM_FLOOR * n as f64;
            let mut denom = n as f64 - well_determined;
            if denom < floor {
                denom = floor;
                guards += 1;
            }
            NoiseModel::Homoscedastic(residuals.norm_squared() / denom)
        }
        NoiseModel::Heteroscedastic(_) => NoiseModel::Heteroscedastic(DVector::from_fn(n, |i, _| {
            residuals[i] * residuals[i] + fitted_var[i]
        })),
    };
    (ArdState { gamma, noise }, guards)
}

/// MacKay fixed-point re-estimation: `γ_j ← (1 - γ_j Σ_jj)/μ_j²`; the
/// heteroscedastic noise update coincides with EM, the homoscedastic one
/// divides the residual sum of squares by `n - Σ_j (1 - γ_j Σ_jj)`.
pub fn mackay_update(data: &Dataset, posterior: &WeightPosterior, state: &ArdState) -> Result<ArdState> {
    check_posterior(data, posterior, state)?;
    let residuals = data.y() - data.x() * &posterior.mu;
    let fitted_var = diag_quadratic_rows(data.x(), &posterior.cov);
    Ok(mackay_from_parts(&residuals, &fitted_var, posterior, state).0)
}

pub(crate) fn mackay_proposal(ev: &Evidence, state: &ArdState) -> Proposal {
    let (s, guards) = mackay_from_parts(&ev.residuals, &ev.fitted_var, &ev.posterior, state);
    Proposal {
        guards,
        ..Proposal::plain(s)
    }
}

/// Solves `min_θ (y - Xθ)ᵀ diag(inv_lambda) (y - Xθ) + Σ_j ridge_j θ_j²`.
pub fn weighted_ridge(
    data: &Dataset,
    inv_lambda: &DVector<f64>,
    ridge: &DVector<f64>,
) -> Result<DVector<f64>> {
    let x = data.x();
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= inv_lambda[i];
    }
    let mut system: DMatrix<f64> = x.transpose() * &xw;
    for j in 0..data.d() {
        system[(j, j)] += ridge[j];
    }
    let factor = cholesky_jittered(&system, "weighted ridge system")?;
    Ok(factor.solve(&(xw.transpose() * data.y())))
}

fn l2_from_evidence(data: &Dataset, ev: &Evidence, state: &ArdState) -> (DVector<f64>, ArdState) {
    let theta = ev.posterior.mu.clone();
    let gamma = DVector::from_fn(data.d(), |j, _| {
        let g = state.gamma[j];
        1.0 / (theta[j] * theta[j] + 1.0 / g - ev.col_quad[j] / (g * g))
    });
    let r = data.y() - data.x() * &theta;
    let noise = match &state.noise {
        NoiseModel::Homoscedastic(l) => {
            let n = data.n() as f64;
            NoiseModel::Homoscedastic(r.norm_squared() / n + l - l * l * ev.pi_diag.sum() / n)
        }
        NoiseModel::Heteroscedastic(lam) => NoiseModel::Heteroscedastic(DVector::from_fn(
            data.n(),
            |i, _| r[i] * r[i] + lam[i] - lam[i] * lam[i] * ev.pi_diag[i],
        )),
    };
    (theta, ArdState { gamma, noise })
}

/// ℓ2-IRLS step: the weighted ridge solution `θ` (which equals `μ_θ`) and the
/// re-estimated `(γ, λ)` expressed through `Π_y`.
pub fn l2_irls_update(data: &Dataset, state: &ArdState) -> Result<(DVector<f64>, ArdState)> {
    let ev = Evidence::compute_auto(data, state)?;
    Ok(l2_from_evidence(data, &ev, state))
}

pub(crate) fn l2_irls_proposal(data: &Dataset, ev: &Evidence, state: &ArdState) -> Proposal {
    let (theta, s) = l2_from_evidence(data, ev, state);
    Proposal {
        theta: Some(theta),
        ..Proposal::plain(s)
    }
}

/// Everything produced by one ℓ1-IRLS step.
#[derive(Debug, Clone)]
pub struct L1IrlsStep {
    pub theta: DVector<f64>,
    pub state: ArdState,
    /// Weight penalty coefficients `w_j = sqrt(x_jᵀ Π_y x_j)`.
    pub weight_penalty: DVector<f64>,
    /// Residual penalty coefficients `v_i = sqrt([Π_y]_ii)`; zero when homoscedastic.
    pub residual_penalty: DVector<f64>,
    /// Per-sample `1/λ_i` used in the quadratic data term.
    pub inv_lambda: DVector<f64>,
    pub inner: AdmmOutcome,
    /// Inner objective at `theta`.
    pub surrogate: f64,
}

pub(crate) fn l1_from_evidence(
    data: &Dataset,
    ev: &Evidence,
    state: &ArdState,
    admm: &AdmmConfig,
    theta_warm: &DVector<f64>,
) -> Result<L1IrlsStep> {
    let w = ev.col_quad.map(|q| q.max(0.0).sqrt());
    let inv_lambda = ev.lambda.map(|l| 1.0 / l);
    let v = match state.noise {
        // The shared-variance surrogate reduces to a weighted lasso.
        NoiseModel::Homoscedastic(_) => DVector::zeros(data.n()),
        NoiseModel::Heteroscedastic(_) => ev.pi_diag.map(|p| p.max(0.0).sqrt()),
    };
    let inner = solve_double_l1(data.x(), data.y(), &inv_lambda, &w, &v, admm, theta_warm)?;
    let theta = inner.theta.clone();
    let gamma = DVector::from_fn(data.d(), |j, _| w[j] / theta[j].abs());
    let r = &(data.y() - data.x() * &theta);
    let noise = match state.noise {
        NoiseModel::Homoscedastic(_) => {
            NoiseModel::Homoscedastic(r.norm() / ev.pi_diag.sum().max(0.0).sqrt())
        }
        NoiseModel::Heteroscedastic(_) => {
            NoiseModel::Heteroscedastic(DVector::from_fn(data.n(), |i, _| r[i].abs() / v[i]))
        }
    };
    let surrogate = double_l1_objective(data.x(), data.y(), &inv_lambda, &w, &v, &theta);
    Ok(L1IrlsStep {
        theta,
        state: ArdState { gamma, noise },
        weight_penalty: w,
        residual_penalty: v,
        inv_lambda,
        inner,
        surrogate,
    })
}

/// ℓ1-IRLS step with full diagnostics.
pub fn l1_irls_step(
    data: &Dataset,
    state: &ArdState,
    admm: &AdmmConfig,
    theta_warm: &DVector<f64>,
) -> Result<L1IrlsStep> {
    if theta_warm.len() != data.d() {
        return Err(ArdError::input("warm-start weights have the wrong length"));
    }
    let ev = Evidence::compute_auto(data, state)?;
    l1_from_evidence(data, &ev, state, admm, theta_warm)
}

/// ℓ1-IRLS step: inner doubly-penalized solve, then `γ_j ← w_j/|θ_j|`,
/// `λ_i ← |r_i|/v_i`.
pub fn l1_irls_update(
    data: &Dataset,
    state: &ArdState,
    admm: &AdmmConfig,
    theta_warm: &DVector<f64>,
) -> Result<(DVector<f64>, ArdState)> {
    let step = l1_irls_step(data, state, admm, theta_warm)?;
    Ok((step.theta, step.state))
}

pub(crate) fn l1_irls_proposal(
    data: &Dataset,
    ev: &Evidence,
    state: &ArdState,
    admm: &AdmmConfig,
    theta_warm: &DVector<f64>,
) -> Result<Proposal> {
    let step = l1_from_evidence(data, ev, state, admm, theta_warm)?;
    Ok(Proposal {
        state: step.state,
        theta: Some(step.theta),
        guards: 0,
        surrogate: Some(step.surrogate),
        inner: Some(step.inner),
    })
}

fn gradient_from_evidence(
    data: &Dataset,
    ev: &Evidence,
    state: &ArdState,
    lr_gamma: f64,
    lr_lambda: f64,
) -> ArdState {
    let grad = ev.gradient(data, state);
    let gamma = DVector::from_fn(state.gamma.len(), |j, _| {
        let g = state.gamma[j];
        (g.ln() - lr_gamma * g * grad.grad_gamma[j]).exp()
    });
    let noise = match (&state.noise, &grad.grad_noise) {
        (NoiseModel::Homoscedastic(l), NoiseGradient::Shared(gl)) => {
            NoiseModel::Homoscedastic((l.ln() - lr_lambda * l * gl).exp())
        }
        (NoiseModel::Heteroscedastic(lam), NoiseGradient::PerSample(gl)) => {
            NoiseModel::Heteroscedastic(DVector::from_fn(lam.len(), |i, _| {
                (lam[i].ln() - lr_lambda * lam[i] * gl[i]).exp()
            }))
        }
        _ => unreachable!("gradient shape follows the noise model"),
    };
    ArdState { gamma, noise }
}

/// Plain gradient descent on `log γ` and `log λ`.
pub fn gradient_update(data: &Dataset, state: &ArdState, lr_gamma: f64, lr_lambda: f64) -> Result<ArdState> {
    if !(lr_gamma > 0.0 && lr_lambda > 0.0) {
        return Err(ArdError::input("learning rates must be positive"));
    }
    let ev = Evidence::compute_auto(data, state)?;
    Ok(gradient_from_evidence(data, &ev, state, lr_gamma, lr_lambda))
}

pub(crate) fn gradient_proposal(
    data: &Dataset,
    ev: &Evidence,
    state: &ArdState,
    lr_gamma: f64,
    lr_lambda: f64,
) -> Proposal {
    Proposal::plain(gradient_from_evidence(data, ev, state, lr_gamma, lr_lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_posterior;

    fn scalar() -> (Dataset, ArdState) {
        let data = Dataset::from_rows(&[vec![1.0]], &[2.0]).unwrap();
        let state = ArdState::constant(1, 1, 1.0, 1.0, true).unwrap();
        (data, state)
    }

    fn lambda_of(s: &ArdState) -> f64 {
        s.noise.values()[0]
    }

    #[test]
    fn em_scalar() {
        let (data, state) = scalar();
        let post = compute_posterior(&data, &state).unwrap();
        let next = em_update(&data, &post, &state).unwrap();
        assert!((next.gamma[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((lambda_of(&next) - 1.5).abs() < 1e-15);

        let homo = ArdState::constant(1, 1, 1.0, 1.0, false).unwrap();
        let next = em_update(&data, &post, &homo).unwrap();
        assert!((lambda_of(&next) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn em_zero_residual_zero_uncertainty() {
        let data = Dataset::from_rows(&[vec![1.0], vec![2.0]], &[1.0, 2.0]).unwrap();
        let post = WeightPosterior {
            mu: DVector::from_element(1, 1.0),
            cov: DMatrix::zeros(1, 1),
        };
        let state = ArdState::constant(1, 2, 1.0, 1.0, true).unwrap();
        let next = em_update(&data, &post, &state).unwrap();
        assert_eq!(next.noise.values(), vec![0.0, 0.0]);
    }

    #[test]
    fn studentized_em_inflates_noise() {
        let (data, state) = scalar();
        let post = compute_posterior(&data, &state).unwrap();
        let next = em_update_with(&data, &post, &state, LambdaUpdate::Studentized { power: 2.0 }).unwrap();
        // r = 1, h = 0.5
        assert!((lambda_of(&next) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn mackay_scalar_and_guards() {
        let (data, state) = scalar();
        let post = compute_posterior(&data, &state).unwrap();
        let next = mackay_update(&data, &post, &state).unwrap();
        assert!((next.gamma[0] - 0.5).abs() < 1e-15);
        assert!((lambda_of(&next) - 1.5).abs() < 1e-15);

        let degenerate = WeightPosterior {
            mu: DVector::zeros(1),
            cov: DMatrix::from_element(1, 1, 2.0),
        };
        let (s, guards) = mackay_from_parts(
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 0.0),
            &degenerate,
            &ArdState::constant(1, 1, 1.0, 1.0, false).unwrap(),
        );
        // numerator clamp, mu floor, denominator floor
        assert_eq!(guards, 2);
        assert_eq!(s.gamma[0], 0.0);
    }

    #[test]
    fn l2_irls_scalar() {
        let (data, state) = scalar();
        let (theta, next) = l2_irls_update(&data, &state).unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-15);
        assert!((next.gamma[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((lambda_of(&next) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn l1_irls_scalar() {
        let (data, state) = scalar();
        let admm = AdmmConfig {
            max_inner_iter: 5000,
            ..Default::default()
        };
        let step = l1_irls_step(&data, &state, &admm, &DVector::zeros(1)).unwrap();
        let s = 0.5f64.sqrt();
        assert!((step.weight_penalty[0] - s).abs() < 1e-15);
        assert!((step.residual_penalty[0] - s).abs() < 1e-15);
        assert!((step.theta[0] - 2.0).abs() < 1e-7);
        assert!((step.state.gamma[0] - 0.353_553_390_593_273_8).abs() < 1e-7);
        assert!(lambda_of(&step.state) < 1e-7);
        let cfg = super::super::FitConfig {
            damping_gamma: 1.0,
            damping_lambda: 1.0,
            ..Default::default()
        };
        let clipped = super::super::stabilize(&step.state, &state, &cfg).unwrap();
        assert_eq!(lambda_of(&clipped), cfg.clip_min);
    }

    #[test]
    fn gradient_scalar() {
        let (data, state) = scalar();
        let next = gradient_update(&data, &state, 0.1, 0.1).unwrap();
        assert!((next.gamma[0] - (-0.025f64).exp()).abs() < 1e-15);
        assert!((lambda_of(&next) - 0.025f64.exp()).abs() < 1e-15);
        assert!((next.gamma[0] - 0.97531).abs() < 1e-5);
        assert!((lambda_of(&next) - 1.02532).abs() < 1e-5);
        assert!(gradient_update(&data, &state, 0.0, 0.1).is_err());
    }
}
