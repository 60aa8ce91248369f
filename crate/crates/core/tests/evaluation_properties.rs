mod common;

use common::{instance, rel, rel_max, rng};
use jointard::evaluation::{
    diagnostics, ess, leverage, rmse, topk_recall, RelevanceKind, RelevanceScores,
};
use jointard::optim::updates::em_update;
use jointard::{compute_posterior, ArdState, Dataset, NoiseModel};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::RngExt;

/// Brute-force LOO: refit without row i and predict it.
fn loo_refit(data: &Dataset, state: &ArdState) -> Vec<f64> {
    let n = data.n();
    let lam = state.noise.variances(n);
    (0..n)
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let sub = data.select_rows(&keep).unwrap();
            let lam_sub: Vec<f64> = keep.iter().map(|&k| lam[k]).collect();
            let sub_state =
                ArdState::new(state.gamma.clone(), NoiseModel::Heteroscedastic(DVector::from_vec(lam_sub))).unwrap();
            let post = compute_posterior(&sub, &sub_state).unwrap();
            let r = data.y()[i] - data.x().row(i).dot(&post.mu.transpose());
            r * r
        })
        .collect()
}

#[test]
fn loo_identity_matches_refits() {
    for seed in 0..10 {
        let (data, state) = instance(300 + seed, 15, 3, seed % 2 == 0);
        let post = compute_posterior(&data, &state).unwrap();
        let rep = diagnostics(&data, &post, &state.noise);
        let brute = loo_refit(&data, &state);
        for i in 0..15 {
            assert!(
                rel(rep.loo_sq_residuals[i], brute[i]) <= 1e-8,
                "seed {seed} row {i}: {} vs {}",
                rep.loo_sq_residuals[i],
                brute[i]
            );
            assert!(rep.loo_sq_residuals[i] >= rep.residuals[i].powi(2));
        }
    }
}

#[test]
fn low_leverage_loo_follows_first_order_expansion() {
    let mut checked = 0;
    for seed in 0..20 {
        // Many rows and a strong prior keep every leverage small.
        let (data, mut state) = instance(400 + seed, 300, 3, true);
        state.gamma = DVector::from_element(3, 5.0);
        state.noise = NoiseModel::Heteroscedastic(DVector::from_fn(300, |i, _| 1.0 + (i % 4) as f64));
        let post = compute_posterior(&data, &state).unwrap();
        let rep = diagnostics(&data, &post, &state.noise);
        if rep.leverage.iter().any(|h| *h > 0.1) {
            continue;
        }
        checked += 1;
        for i in 0..data.n() {
            let (h, r2) = (rep.leverage[i], rep.residuals[i].powi(2));
            let gap = (rep.loo_sq_residuals[i] - (r2 + 2.0 * h * r2)).abs();
            assert!(gap <= 5.0 * h * h * r2 + 1e-300, "seed {seed} row {i}: gap {gap}, h {h}");
        }
    }
    assert!(checked >= 10, "only {checked} instances had max leverage <= 0.1");
}

#[test]
fn em_noise_proposal_is_residual_plus_influence() {
    for seed in 0..5 {
        let (data, state) = instance(500 + seed, 25, 6, true);
        let post = compute_posterior(&data, &state).unwrap();
        let next = em_update(&data, &post, &state).unwrap();
        let rep = diagnostics(&data, &post, &state.noise);
        let lam = state.noise.variances(data.n());
        let expect: Vec<f64> =
            (0..data.n()).map(|i| rep.residuals[i].powi(2) + lam[i] * rep.leverage[i]).collect();
        let got = next.noise.variances(data.n());
        for i in 0..data.n() {
            assert!(rel(got[i], expect[i]) <= 1e-12, "seed {seed} row {i}");
        }
    }
}

#[test]
fn leverage_sums_to_hat_trace() {
    for seed in 0..5 {
        for hetero in [true, false] {
            let (data, state) = instance(600 + seed, 30, 8, hetero);
            let post = compute_posterior(&data, &state).unwrap();
            let h = leverage(&data, &post, &state.noise);
            assert!(h.iter().all(|v| *v >= 0.0));
            let lam = state.noise.variances(data.n());
            let linv = DMatrix::from_diagonal(&lam.map(|l| 1.0 / l));
            let hat = linv * data.x() * &post.cov * data.x().transpose();
            let sum: f64 = h.iter().sum();
            assert!((sum - hat.trace()).abs() <= 1e-10 * hat.trace().max(1.0));
        }
    }
}

#[test]
fn strong_prior_drives_leverage_to_zero() {
    let (data, mut state) = instance(7, 20, 4, true);
    state.gamma = DVector::from_element(4, 1e12);
    let post = compute_posterior(&data, &state).unwrap();
    assert!(leverage(&data, &post, &state.noise).iter().all(|h| *h < 1e-9));
}

#[test]
fn topk_recall_is_monotone_in_k() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = 20;
        let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut r);
        let truth = &idx[..5];
        let mut last = 0.0;
        for k in 1..=n {
            let v = topk_recall(&scores, truth, k).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert_eq!(last, 1.0);
    }
}

#[test]
fn ess_is_permutation_and_scale_invariant() {
    let mut r = rng(12);
    for _ in 0..50 {
        let mut s: Vec<f64> = (0..15).map(|_| r.random::<f64>().powi(3)).collect();
        let base = ess(&RelevanceScores::new(s.clone(), RelevanceKind::Weights).unwrap()).unwrap();
        assert!(base > 1.0 / 15.0 - 1e-12 && base <= 1.0 + 1e-12);
        s.shuffle(&mut r);
        let perm = ess(&RelevanceScores::new(s.clone(), RelevanceKind::Weights).unwrap()).unwrap();
        let c = 10f64.powf(r.random::<f64>() * 6.0 - 3.0);
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let sc = ess(&RelevanceScores::new(scaled, RelevanceKind::Samples).unwrap()).unwrap();
        assert!(rel(perm, base) <= 1e-12);
        assert!(rel(sc, base) <= 1e-12);
    }
}

#[test]
fn rmse_is_homogeneous() {
    let mut r = rng(13);
    let p: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
    let t: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
    let base = rmse(&p, &t).unwrap();
    for c in [-3.0, 0.5, 7.0] {
        let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
        assert!(rel_max(&[rmse(&ps, &ts).unwrap()], &[base * f64::abs(c)]) <= 1e-14);
    }
}
