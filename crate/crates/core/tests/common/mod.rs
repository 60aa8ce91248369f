#![allow(dead_code)]

use jointard::{ArdState, Dataset, NoiseModel};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian design, targets from a random linear model plus noise, and a
/// random positive state.
pub fn instance(seed: u64, n: usize, d: usize, hetero: bool) -> (Dataset, ArdState) {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
    let theta = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
    let noise = DVector::from_fn(n, |_, _| { let e: f64 = StandardNormal.sample(&mut r); 0.3 * e });
    let y = &x * theta + noise;
    let gamma = DVector::from_fn(d, |_, _| (r.random::<f64>() * 4.0 - 2.0).exp());
    let noise = if hetero {
        NoiseModel::Heteroscedastic(DVector::from_fn(n, |_, _| (r.random::<f64>() * 3.0 - 2.0).exp()))
    } else {
        NoiseModel::Homoscedastic((r.random::<f64>() * 3.0 - 2.0).exp())
    };
    (Dataset::new(x, y).unwrap(), ArdState::new(gamma, noise).unwrap())
}

/// `Σ_y = Λ + X Γ⁻¹ Xᵀ` assembled densely.
pub fn dense_sigma_y(data: &Dataset, state: &ArdState) -> DMatrix<f64> {
    let x = data.x();
    let ginv = DMatrix::from_diagonal(&state.gamma.map(|g| 1.0 / g));
    let mut s = x * ginv * x.transpose();
    let lam = state.noise.variances(data.n());
    for i in 0..data.n() {
        s[(i, i)] += lam[i];
    }
    s
}

/// `-log N(y; 0, Σ_y)` through an LU decomposition.
pub fn dense_nll(data: &Dataset, state: &ArdState) -> f64 {
    let s = dense_sigma_y(data, state);
    let n = data.n() as f64;
    let lu = s.clone().lu();
    let log_det: f64 = lu.u().diagonal().iter().map(|v| v.abs().ln()).sum();
    let alpha = lu.solve(data.y()).unwrap();
    0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + data.y().dot(&alpha))
}

/// Dense inverse of `Σ_y`.
pub fn dense_pi(data: &Dataset, state: &ArdState) -> DMatrix<f64> {
    dense_sigma_y(data, state).try_inverse().unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(1e-300)
}

/// Largest relative entrywise deviation, scaled by the largest magnitude.
pub fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().chain(a).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
}

/// Dense-signal instance: every weight is far from zero, so an ARD fit keeps
/// all features and its fixed point is interior in `γ`.
pub fn dense_signal(seed: u64, n: usize, d: usize) -> Dataset {
    let mut r = rng(seed ^ 0x5eed);
    let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
    let theta = DVector::from_fn(d, |_, _| {
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        sign * (1.0 + r.random::<f64>())
    });
    let noise = DVector::from_fn(n, |_, _| {
        let e: f64 = StandardNormal.sample(&mut r);
        0.5 * e
    });
    let y = &x * theta + noise;
    Dataset::new(x, y).unwrap()
}

/// Exact (undamped) EM with clips wide enough to stay out of the way.
pub fn exact_em(hetero: bool, max_iter: usize, tol_rel: f64) -> jointard::FitConfig {
    jointard::FitConfig {
        method: jointard::Method::Em,
        noise_mode: if hetero { jointard::NoiseMode::Hetero } else { jointard::NoiseMode::Homo },
        damping_gamma: 1.0,
        damping_lambda: 1.0,
        clip_min: 1e-12,
        clip_max: 1e12,
        warm_start_steps: 0,
        lambda_update_period: 1,
        max_iter,
        tol_rel,
        init_gamma: 1.0,
        init_lambda: 1.0,
        ..Default::default()
    }
}

/// Largest relative change over all of `γ` and `λ`.
pub fn state_rel_change(a: &ArdState, b: &ArdState) -> f64 {
    let pa: Vec<f64> = a.gamma.iter().copied().chain(a.noise.values()).collect();
    let pb: Vec<f64> = b.gamma.iter().copied().chain(b.noise.values()).collect();
    pa.iter().zip(&pb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / x.abs().max(y.abs())))
}
