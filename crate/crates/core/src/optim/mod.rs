//! Iterative re-estimation of `(gamma, lambda)` and the outer fit loop.

pub mod admm;
pub mod updates;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use admm::{AdmmConfig, AdmmOutcome};
pub use updates::{
    em_update, em_update_with, gradient_update, l1_irls_step, l1_irls_update, l2_irls_update,
    mackay_update, weighted_ridge, L1IrlsStep, Proposal,
};

use crate::data::Dataset;
use crate::error::{ArdError, Result};
use crate::model::{ArdState, Evidence, NoiseModel, Route, WeightPosterior};

/// Re-estimation procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Em,
    Mackay,
    L2Irls,
    L1Irls {
        #[serde(default)]
        admm: AdmmConfig,
    },
    Gradient {
        #[serde(default = "default_lr")]
        lr_gamma: f64,
        #[serde(default = "default_lr")]
        lr_lambda: f64,
    },
}

fn default_lr() -> f64 {
    0.05
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::Mackay => "mackay",
            Method::L2Irls => "l2_irls",
            Method::L1Irls { .. } => "l1_irls",
            Method::Gradient { .. } => "gradient",
        }
    }

    /// Gradient method with the default learning rates.
    pub fn gradient() -> Self {
        Method::Gradient {
            lr_gamma: default_lr(),
            lr_lambda: default_lr(),
        }
    }

    pub fn l1_irls() -> Self {
        Method::L1Irls {
            admm: AdmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Homo,
    #[default]
    Hetero,
}

/// Noise re-estimation variant for EM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaUpdate {
    /// `λ_i ← r_i² + x_iᵀ Σ_θ x_i`
    #[default]
    Standard,
    /// `λ_i ← r_i² / (1 - h_i)^power`, with `h_i` the sample leverage.
    Studentized { power: f64 },
}

/// Solver knobs for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub method: Method,
    pub noise_mode: NoiseMode,
    pub lambda_update: LambdaUpdate,
    pub max_iter: usize,
    pub damping_gamma: f64,
    pub damping_lambda: f64,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Iterations during which the noise parameters stay frozen.
    pub warm_start_steps: usize,
    /// After warm start, noise is updated every `lambda_update_period`-th iteration.
    pub lambda_update_period: usize,
    pub tol_rel: f64,
    pub patience: usize,
    pub init_gamma: f64,
    pub init_lambda: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::Em,
            noise_mode: NoiseMode::Hetero,
            lambda_update: LambdaUpdate::Standard,
            max_iter: 5000,
            damping_gamma: 0.01,
            damping_lambda: 0.01,
            clip_min: 1e-6,
            clip_max: 1e6,
            warm_start_steps: 100,
            lambda_update_period: 3,
            tol_rel: 1e-6,
            patience: 5,
            init_gamma: 0.1,
            init_lambda: 0.1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(ArdError::input(format!("config field `{field}`: {why}")));
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.max_iter == 0 {
            return bad("max_iter", "must be positive");
        }
        if !in_unit(self.damping_gamma) {
            return bad("damping_gamma", "must lie in (0, 1]");
        }
        if !in_unit(self.damping_lambda) {
            return bad("damping_lambda", "must lie in (0, 1]");
        }
        if !(self.clip_min > 0.0 && self.clip_min.is_finite()) {
            return bad("clip_min", "must be positive");
        }
        if !(self.clip_max > self.clip_min && self.clip_max.is_finite()) {
            return bad("clip_max", "must be finite and exceed clip_min");
        }
        if self.lambda_update_period == 0 {
            return bad("lambda_update_period", "must be positive");
        }
        if !(self.tol_rel > 0.0) {
            return bad("tol_rel", "must be positive");
        }
        if self.patience == 0 {
            return bad("patience", "must be positive");
        }
        if !(self.init_gamma > 0.0 && self.init_gamma.is_finite()) {
            return bad("init_gamma", "must be positive");
        }
        if !(self.init_lambda > 0.0 && self.init_lambda.is_finite()) {
            return bad("init_lambda", "must be positive");
        }
        match self.method {
            Method::L1Irls { admm } => admm.validate()?,
            Method::Gradient { lr_gamma, lr_lambda } if !(lr_gamma > 0.0 && lr_lambda > 0.0) => {
                return bad("method", "learning rates must be positive");
            }
            _ => {}
        }
        if let LambdaUpdate::Studentized { power } = self.lambda_update {
            if !(power >= 2.0) {
                return bad("lambda_update", "studentized power must be >= 2");
            }
            if self.method != Method::Em {
                return bad("lambda_update", "the studentized variant applies to EM only");
            }
        }
        Ok(())
    }

    /// Whether noise parameters are updated at iteration `iter` (0-based).
    pub fn lambda_active(&self, iter: usize) -> bool {
        iter >= self.warm_start_steps && (iter - self.warm_start_steps).is_multiple_of(self.lambda_update_period)
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Objective at the iterate the update was computed from.
    pub nll: f64,
    /// Largest block-wise relative change of the log-parameters in this step.
    pub max_rel_change: f64,
    pub guard_activations: usize,
    pub lambda_updated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_converged: Option<bool>,
    /// ℓ1-IRLS inner objective at the returned weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ArdState,
    /// Posterior recomputed from the final state.
    pub posterior: WeightPosterior,
    pub trace: Vec<TraceEntry>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Linear-algebra route used inside the loop.
    pub route: Route,
    /// Worker threads used by the linear algebra (always 1).
    pub threads: usize,
}

impl FitResult {
    pub fn final_nll(&self) -> Option<f64> {
        self.trace.last().map(|t| t.nll)
    }

    pub fn inner_warnings(&self) -> usize {
        self.trace.iter().filter(|t| t.inner_converged == Some(false)).count()
    }
}

/// A fit aborted by a numerical failure, with the trace recorded so far.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error} (after {} iterations)", trace.len())]
pub struct FitFailure {
    pub error: ArdError,
    pub trace: Vec<TraceEntry>,
}

impl From<ArdError> for FitFailure {
    fn from(error: ArdError) -> Self {
        Self { error, trace: Vec::new() }
    }
}

fn blend(previous: f64, proposal: f64, damping: f64, lo: f64, hi: f64) -> f64 {
    let proposal = if proposal.is_nan() {
        previous
    } else if proposal.is_infinite() {
        hi
    } else {
        proposal
    };
    ((1.0 - damping) * previous + damping * proposal).clamp(lo, hi)
}

/// Damped blend `(1-η)·previous + η·proposal` followed by clipping to
/// `[clip_min, clip_max]`.
///
/// Non-finite proposals are sanitized before blending: `+∞` counts as
/// `clip_max` and `NaN` keeps the previous value.
pub fn stabilize(proposal: &ArdState, previous: &ArdState, config: &FitConfig) -> Result<ArdState> {
    if proposal.gamma.len() != previous.gamma.len() {
        return Err(ArdError::input("proposal and previous state differ in dimension"));
    }
    let (lo, hi) = (config.clip_min, config.clip_max);
    let gamma = DVector::from_fn(previous.gamma.len(), |j, _| {
        blend(previous.gamma[j], proposal.gamma[j], config.damping_gamma, lo, hi)
    });
    let eta = config.damping_lambda;
    let noise = match (&proposal.noise, &previous.noise) {
        (NoiseModel::Homoscedastic(p), NoiseModel::Homoscedastic(q)) => {
            NoiseModel::Homoscedastic(blend(*q, *p, eta, lo, hi))
        }
        (NoiseModel::Heteroscedastic(p), NoiseModel::Heteroscedastic(q)) if p.len() == q.len() => {
            NoiseModel::Heteroscedastic(DVector::from_fn(q.len(), |i, _| blend(q[i], p[i], eta, lo, hi)))
        }
        _ => return Err(ArdError::input("proposal and previous noise models are incompatible")),
    };
    Ok(ArdState { gamma, noise })
}

fn block_change(prev: &[f64], next: &[f64]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, b) in prev.iter().zip(next) {
        diff = diff.max((b.ln() - a.ln()).abs());
        scale = scale.max(b.ln().abs());
    }
    diff / (1.0 + scale)
}

/// Relative ℓ∞ change of `(log γ, log λ)`, reported per block.
pub fn relative_changes(prev: &ArdState, next: &ArdState) -> (f64, f64) {
    (
        block_change(prev.gamma.as_slice(), next.gamma.as_slice()),
        block_change(&prev.noise.values(), &next.noise.values()),
    )
}

/// True iff both the `γ` and the `λ` block change by less than `tol_rel`.
pub fn converged(prev: &ArdState, next: &ArdState, tol_rel: f64) -> bool {
    let (g, l) = relative_changes(prev, next);
    g < tol_rel && l < tol_rel
}

/// Initial iterate implied by `config` for `data`.
pub fn initial_state(data: &Dataset, config: &FitConfig) -> Result<ArdState> {
    ArdState::constant(
        data.d(),
        data.n(),
        config.init_gamma,
        config.init_lambda,
        config.noise_mode == NoiseMode::Hetero,
    )
}

/// Runs the configured procedure from the constant initial state.
pub fn fit(data: &Dataset, config: &FitConfig) -> std::result::Result<FitResult, FitFailure> {
    config.validate()?;
    let init = initial_state(data, config)?;
    fit_from(data, config, init)
}

/// Runs the configured procedure from a given state.
pub fn fit_from(
    data: &Dataset,
    config: &FitConfig,
    init: ArdState,
) -> std::result::Result<FitResult, FitFailure> {
    config.validate()?;
    init.validate_for(data)?;
    let route = Route::auto(data.n(), data.d());
    let mut state = init;
    let mut theta = DVector::zeros(data.d());
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(config.max_iter.min(100_000));
    let mut streak = 0;
    let mut done = false;

    for iter in 0..config.max_iter {
        let ev = match Evidence::compute(data, &state, route) {
            Ok(ev) => ev,
            Err(error) => return Err(FitFailure { error, trace }),
        };
        let proposal = match config.method {
            Method::Em => updates::em_proposal(&ev, &state, config.lambda_update),
            Method::Mackay => updates::mackay_proposal(&ev, &state),
            Method::L2Irls => updates::l2_irls_proposal(data, &ev, &state),
            Method::L1Irls { admm } => {
                match updates::l1_irls_proposal(data, &ev, &state, &admm, &theta) {
                    Ok(p) => p,
                    Err(error) => return Err(FitFailure { error, trace }),
                }
            }
            Method::Gradient { lr_gamma, lr_lambda } => {
                updates::gradient_proposal(data, &ev, &state, lr_gamma, lr_lambda)
            }
        };
        let lambda_updated = config.lambda_active(iter);
        let mut raw = proposal.state;
        if !lambda_updated {
            raw.noise = state.noise.clone();
        }
        let next = match stabilize(&raw, &state, config) {
            Ok(s) => s,
            Err(error) => return Err(FitFailure { error, trace }),
        };
        if let Some(t) = proposal.theta {
            theta = t;
        }
        let (dg, dl) = relative_changes(&state, &next);
        trace.push(TraceEntry {
            iteration: iter,
            nll: ev.nll(),
            max_rel_change: dg.max(dl),
            guard_activations: proposal.guards,
            lambda_updated,
            inner_iterations: proposal.inner.as_ref().map(|o| o.iterations),
            inner_converged: proposal.inner.as_ref().map(|o| o.converged),
            surrogate: proposal.surrogate,
        });
        // No convergence while the noise is still frozen by the warm start.
        if iter >= config.warm_start_steps && dg < config.tol_rel && dl < config.tol_rel {
            streak += 1;
        } else {
            streak = 0;
        }
        state = next;
        if streak >= config.patience {
            done = true;
            break;
        }
    }

    let final_ev = match Evidence::compute(data, &state, route) {
        Ok(ev) => ev,
        Err(error) => return Err(FitFailure { error, trace }),
    };
    Ok(FitResult {
        iterations_run: trace.len(),
        state,
        posterior: final_ev.posterior,
        trace,
        converged: done,
        route,
        threads: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homo(gamma: &[f64], lambda: f64) -> ArdState {
        ArdState::new(DVector::from_column_slice(gamma), NoiseModel::Homoscedastic(lambda)).unwrap()
    }

    #[test]
    fn stabilize_examples() {
        let cfg = FitConfig {
            damping_gamma: 0.01,
            ..FitConfig::default()
        };
        let s = stabilize(&homo(&[2.0], 1.0), &homo(&[1.0], 1.0), &cfg).unwrap();
        assert!((s.gamma[0] - 1.01).abs() < 1e-15);

        let full = FitConfig {
            damping_gamma: 1.0,
            damping_lambda: 1.0,
            clip_min: 1e-6,
            clip_max: 1e6,
            ..FitConfig::default()
        };
        let raw = ArdState {
            gamma: DVector::from_vec(vec![f64::INFINITY, f64::NAN]),
            noise: NoiseModel::Heteroscedastic(DVector::from_vec(vec![1e12, 0.0])),
        };
        let prev = ArdState::new(
            DVector::from_vec(vec![1.0, 3.0]),
            NoiseModel::Heteroscedastic(DVector::from_vec(vec![1.0, 1.0])),
        )
        .unwrap();
        let s = stabilize(&raw, &prev, &full).unwrap();
        assert_eq!(s.gamma.as_slice(), &[1e6, 3.0]);
        assert_eq!(s.noise.values(), vec![1e6, 1e-6]);

        let mixed = homo(&[1.0, 1.0], 1.0);
        assert!(stabilize(&mixed, &prev, &full).is_err());
    }

    #[test]
    fn convergence_criterion() {
        let a = homo(&[1.0, 2.0], 0.5);
        assert!(converged(&a, &a, 1e-12));
        let b = homo(&[std::f64::consts::E, 2.0], 0.5);
        let (g, _) = relative_changes(&a, &b);
        assert!((g - 0.5).abs() < 1e-15);
        assert!(!converged(&a, &b, 1e-6));
        let c = homo(&[1.0, 2.0], 5.0);
        assert!(!converged(&a, &c, 1e-6));
    }

    #[test]
    fn warm_start_schedule() {
        let cfg = FitConfig {
            warm_start_steps: 4,
            lambda_update_period: 3,
            ..FitConfig::default()
        };
        let active: Vec<usize> = (0..12).filter(|&i| cfg.lambda_active(i)).collect();
        assert_eq!(active, vec![4, 7, 10]);
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = FitConfig {
            damping_gamma: 0.0,
            ..FitConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("damping_gamma"), "{err}");
        let cfg = FitConfig {
            clip_max: 1e-7,
            ..FitConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("clip_max"));
        let cfg = FitConfig {
            method: Method::Mackay,
            lambda_update: LambdaUpdate::Studentized { power: 2.0 },
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys_and_fills_defaults() {
        let cfg: FitConfig = serde_json::from_str(r#"{"method":{"kind":"l1_irls"},"max_iter":10}"#).unwrap();
        assert_eq!(cfg.max_iter, 10);
        assert_eq!(cfg.method, Method::l1_irls());
        assert_eq!(cfg.damping_gamma, 0.01);
        assert!(serde_json::from_str::<FitConfig>(r#"{"max_iters":10}"#).is_err());
        let back: FitConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
