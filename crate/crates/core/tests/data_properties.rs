mod common;

use common::rng;
use jointard::datagen::{contaminate_targets, gen_sparse_linear, split_indices, ContaminationSpec, SyntheticSpec};
use jointard::features::{map_standardized, median_heuristic, FeatureMapSpec};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

#[test]
fn unit_multiplier_makes_outliers_indistinguishable() {
    let mut gaps = Vec::new();
    for seed in 0..50 {
        let spec = SyntheticSpec { multiplier: 1.0, n_test: 0, seed, ..SyntheticSpec::default() };
        let draw = gen_sparse_linear(&spec).unwrap();
        let theta = DVector::from_vec(draw.truth.theta_true.clone());
        let eps = draw.train.y() - draw.train.x() * theta;
        let (mut out, mut inl) = (Vec::new(), Vec::new());
        for i in 0..spec.n {
            if draw.truth.outliers.binary_search(&i).is_ok() {
                out.push(eps[i]);
            } else {
                inl.push(eps[i]);
            }
        }
        gaps.push(mean_var(&out).1 - mean_var(&inl).1);
    }
    let (m, v) = mean_var(&gaps);
    let se = (v / gaps.len() as f64).sqrt();
    assert!(m.abs() < 3.0 * se, "mean variance gap {m:.3e}, standard error {se:.3e}");
}

#[test]
fn outliers_inflate_noise_by_the_multiplier() {
    let draw = gen_sparse_linear(&SyntheticSpec { n: 2000, seed: 3, ..SyntheticSpec::default() }).unwrap();
    let theta = DVector::from_vec(draw.truth.theta_true.clone());
    let eps = draw.train.y() - draw.train.x() * theta;
    let out: Vec<f64> = draw.truth.outliers.iter().map(|&i| eps[i]).collect();
    let sd = mean_var(&out).1.sqrt();
    assert!((sd / 2.0 - 1.0).abs() < 0.15, "outlier sd {sd}");
    for (i, s) in draw.truth.per_sample_sigma.iter().enumerate() {
        let expect = if draw.truth.outliers.contains(&i) { 2.0 } else { 0.2 };
        assert!((s - expect).abs() < 1e-15);
    }
}

#[test]
fn noiseless_draw_is_recovered_by_least_squares() {
    let spec = SyntheticSpec { n: 120, d: 20, contamination_ratio: 0.0, sigma: 1e-9, n_test: 0, seed: 9, ..Default::default() };
    let draw = gen_sparse_linear(&spec).unwrap();
    let x = draw.train.x();
    let xtx = x.transpose() * x;
    let ols = xtx.cholesky().unwrap().solve(&(x.transpose() * draw.train.y()));
    for (a, b) in ols.iter().zip(&draw.truth.theta_true) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn contamination_never_touches_test_rows() {
    for seed in 0..5 {
        let clean = gen_sparse_linear(&SyntheticSpec { contamination_ratio: 0.0, seed, ..Default::default() }).unwrap();
        let dirty = gen_sparse_linear(&SyntheticSpec { contamination_ratio: 0.4, multiplier: 50.0, seed, ..Default::default() }).unwrap();
        let (a, b) = (clean.test.unwrap(), dirty.test.unwrap());
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
    }
}

#[test]
fn contamination_shift_concentrates_near_amplitude() {
    let y = DVector::from_fn(10, |i, _| i as f64);
    let spec0 = ContaminationSpec::default();
    let (lo, hi) = (spec0.amplitude - 4.0 * 0.75, spec0.amplitude + 4.0 * 0.75);
    for seed in 0..200 {
        let (t, idx) = contaminate_targets(&y, &ContaminationSpec { rho: 0.1, seed, ..spec0 }).unwrap();
        assert_eq!(idx.len(), 1);
        let shift = (t[idx[0]] - y[idx[0]]).abs();
        assert!((lo..=hi).contains(&shift), "seed {seed}: shift {shift}");
        assert_eq!((0..10).filter(|&i| t[i] != y[i]).count(), 1);
    }
}

#[test]
fn splits_partition_and_depend_on_seed() {
    for n in [20, 57, 506] {
        let a = split_indices(n, 0.2, None, 1).unwrap();
        let b = split_indices(n, 0.2, None, 2).unwrap();
        assert_eq!(a.test.len(), n / 5);
        assert_ne!(a, b);
        assert!(a.train.iter().all(|i| a.test.binary_search(i).is_err()));
        assert_eq!(a, split_indices(n, 0.2, None, 1).unwrap());
    }
    let capped = split_indices(10_000, 0.2, Some(2000), 4).unwrap();
    assert_eq!(capped.train.len(), 2000);
}

fn gaussian_rows(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r))
}

#[test]
fn fourier_features_approximate_the_gaussian_kernel() {
    let x = gaussian_rows(21, 8, 3);
    let ls = 1.5;
    let spec = FeatureMapSpec::RandomFourier { out_dim: 4096, lengthscale: Some(ls), seed: 5 };
    let z = map_standardized(&spec, &x, None).unwrap();
    let bound = (2.0f64 / 4096.0).sqrt();
    assert!(z.iter().all(|v| v.abs() <= bound));
    for i in 0..8 {
        for j in 0..8 {
            let exact = (-(x.row(i) - x.row(j)).norm_squared() / (2.0 * ls * ls)).exp();
            let approx = z.row(i).dot(&z.row(j));
            assert!((approx - exact).abs() <= 0.05, "pair ({i},{j}): {approx} vs {exact}");
        }
    }
    assert_eq!(z, map_standardized(&spec, &x, None).unwrap());
    let other = FeatureMapSpec::RandomFourier { out_dim: 4096, lengthscale: Some(ls), seed: 6 };
    assert_ne!(z, map_standardized(&other, &x, None).unwrap());
}

#[test]
fn rbf_basis_on_training_rows_is_a_kernel_matrix() {
    let x = gaussian_rows(22, 30, 4);
    let spec = FeatureMapSpec::RbfBasis { lengthscale: None }.resolve(&x).unwrap();
    assert_eq!(spec, FeatureMapSpec::RbfBasis { lengthscale: Some(median_heuristic(&x).unwrap()) });
    let phi = map_standardized(&spec, &x, Some(&x)).unwrap();
    for i in 0..30 {
        assert_eq!(phi[(i, i)], 1.0);
        for j in 0..30 {
            assert_eq!(phi[(i, j)], phi[(j, i)]);
            assert!(phi[(i, j)] > 0.0 && phi[(i, j)] <= 1.0);
        }
    }
}

#[test]
fn polynomial_powers() {
    let x = DMatrix::from_row_slice(1, 1, &[2.0]);
    let spec = FeatureMapSpec::Polynomial { degree: 2, include_bias: true };
    assert_eq!(map_standardized(&spec, &x, None).unwrap().as_slice(), &[1.0, 2.0, 4.0]);
    let wide = FeatureMapSpec::Polynomial { degree: 11, include_bias: true };
    assert_eq!(map_standardized(&wide, &x, None).unwrap().ncols(), 12);
}
