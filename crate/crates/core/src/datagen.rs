//! Synthetic sparse regression with variance-inflated outliers, additive
//! target contamination for real data, and seeded train/test splits.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::RngExt;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ArdError, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Fraction of nonzero weights; the support has `floor(sparsity_ratio * d)` entries.
    pub sparsity_ratio: f64,
    /// Fraction of outliers; `floor(contamination_ratio * n)` samples.
    pub contamination_ratio: f64,
    /// Inlier noise standard deviation.
    pub sigma: f64,
    /// Outlier noise standard deviation is `multiplier * sigma`.
    pub multiplier: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 500,
            d: 50,
            sparsity_ratio: 0.2,
            contamination_ratio: 0.2,
            sigma: 0.2,
            multiplier: 10.0,
            n_test: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn support_size(&self) -> usize {
        (self.sparsity_ratio * self.d as f64).floor() as usize
    }

    pub fn outlier_count(&self) -> usize {
        (self.contamination_ratio * self.n as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(ArdError::input(format!("synthetic field `{field}`: {why}")));
        if self.n == 0 {
            return bad("n", "must be positive");
        }
        if self.d == 0 {
            return bad("d", "must be positive");
        }
        if !(self.sparsity_ratio > 0.0 && self.sparsity_ratio <= 1.0) {
            return bad("sparsity_ratio", "must lie in (0, 1]");
        }
        if self.support_size() == 0 {
            return bad("sparsity_ratio", "selects an empty support for this d");
        }
        if !(0.0..1.0).contains(&self.contamination_ratio) {
            return bad("contamination_ratio", "must lie in [0, 1)");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be positive");
        }
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return bad("multiplier", "must be positive");
        }
        Ok(())
    }
}

/// Ground truth behind a synthetic draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta_true: Vec<f64>,
    /// Sorted indices of nonzero weights.
    pub support: Vec<usize>,
    /// Sorted indices of outlier training samples.
    pub outliers: Vec<usize>,
    pub per_sample_sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub train: Dataset,
    /// `None` when `n_test == 0`.
    pub test: Option<Dataset>,
    pub truth: GroundTruth,
}

fn sorted_sample(rng: &mut impl rand::Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

fn gaussian_design(rows: usize, cols: usize, which: Stream, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, which);
    // Row-major fill so a prefix of rows does not depend on `rows`.
    let mut x = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    x
}

/// Draws `(train, test, truth)`; test targets never carry outlier noise.
pub fn gen_sparse_linear(spec: &SyntheticSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);

    let mut wrng = stream(spec.seed, Stream::Weights);
    let support = sorted_sample(&mut wrng, d, spec.support_size());
    let mut theta = DVector::zeros(d);
    for &j in &support {
        theta[j] = StandardNormal.sample(&mut wrng);
    }

    let outliers = sorted_sample(&mut stream(spec.seed, Stream::Outliers), n, spec.outlier_count());
    let mut per_sample_sigma = vec![spec.sigma; n];
    for &i in &outliers {
        per_sample_sigma[i] = spec.multiplier * spec.sigma;
    }

    let x = gaussian_design(n, d, Stream::Design, spec.seed);
    let mut nrng = stream(spec.seed, Stream::Noise);
    let noise = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut nrng);
        per_sample_sigma[i] * e
    });
    let y = &x * &theta + noise;
    let train = Dataset::new(x, y)?;

    let test = if spec.n_test > 0 {
        let xt = gaussian_design(spec.n_test, d, Stream::TestDesign, spec.seed);
        let mut trng = stream(spec.seed, Stream::TestNoise);
        let noise = DVector::from_fn(spec.n_test, |_, _| {
            let e: f64 = StandardNormal.sample(&mut trng);
            spec.sigma * e
        });
        let yt = &xt * &theta + noise;
        Some(Dataset::new(xt, yt)?)
    } else {
        None
    };

    Ok(SyntheticDraw {
        train,
        test,
        truth: GroundTruth {
            theta_true: theta.iter().copied().collect(),
            support,
            outliers,
            per_sample_sigma,
        },
    })
}

/// Signed additive target contamination `ỹ_i = y_i + a·s_i·δ_i` on a random subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContaminationSpec {
    pub rho: f64,
    pub amplitude: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
    pub seed: u64,
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        Self {
            rho: 0.1,
            amplitude: 3.0,
            delta_mean: 1.0,
            delta_std: 0.25,
            seed: 0,
        }
    }
}

impl ContaminationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.rho)
            && self.amplitude > 0.0
            && self.delta_mean.is_finite()
            && self.delta_std > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ArdError::input(format!("invalid contamination spec {self:?}")))
        }
    }
}

/// Contaminates already standardized targets. Returns the new targets and the
/// sorted corrupted indices.
pub fn contaminate_targets(y: &DVector<f64>, spec: &ContaminationSpec) -> Result<(DVector<f64>, Vec<usize>)> {
    spec.validate()?;
    let n = y.len();
    let k = (spec.rho * n as f64).floor() as usize;
    let mut rng = stream(spec.seed, Stream::Contamination);
    let outliers = sorted_sample(&mut rng, n, k);
    let delta = Normal::new(spec.delta_mean, spec.delta_std).expect("validated std");
    let mut out = y.clone();
    for &i in &outliers {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out[i] += spec.amplitude * sign * delta.sample(&mut rng);
    }
    Ok((out, outliers))
}

/// Index sets produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random partition with `floor(test_fraction * n)` test rows; the training
/// part is uniformly subsampled down to `cap_train` when set. Both sets sorted.
pub fn split_indices(n: usize, test_fraction: f64, cap_train: Option<usize>, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ArdError::input(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n_test = (test_fraction * n as f64).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, Stream::Split));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    if let Some(cap) = cap_train {
        if cap == 0 {
            return Err(ArdError::input("training cap must be positive"));
        }
        train.truncate(cap);
    }
    if test.is_empty() || train.is_empty() {
        return Err(ArdError::input(format!(
            "split of {n} rows leaves {} train and {} test rows",
            train.len(),
            test.len()
        )));
    }
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(data: &Dataset, test_fraction: f64, cap_train: Option<usize>, seed: u64) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(data.n(), test_fraction, cap_train, seed)?;
    Ok((data.select_rows(&idx.train)?, data.select_rows(&idx.test)?))
}
