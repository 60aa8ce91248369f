//! Feature construction: standardization, polynomial expansion, an RBF basis
//! centred on training rows, and random Fourier features.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ArdError, Result};
use crate::rng::{stream, Stream};

/// Rows used by the median-distance lengthscale heuristic.
pub const MEDIAN_HEURISTIC_ROWS: usize = 1000;

/// Feature map applied after standardization. A missing lengthscale means
/// "median pairwise distance of the standardized training rows".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureMapSpec {
    Identity {},
    Polynomial {
        degree: usize,
        #[serde(default)]
        include_bias: bool,
    },
    RbfBasis {
        #[serde(default)]
        lengthscale: Option<f64>,
    },
    RandomFourier {
        #[serde(default = "default_rff_dim")]
        out_dim: usize,
        #[serde(default)]
        lengthscale: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for FeatureMapSpec {
    fn default() -> Self {
        FeatureMapSpec::Identity {}
    }
}

fn default_rff_dim() -> usize {
    256
}

impl FeatureMapSpec {
    pub fn validate(&self) -> Result<()> {
        let ls_ok = |l: &Option<f64>| l.is_none_or(|v| v > 0.0 && v.is_finite());
        match self {
            FeatureMapSpec::Identity {} => Ok(()),
            FeatureMapSpec::Polynomial { degree, .. } if *degree >= 1 => Ok(()),
            FeatureMapSpec::Polynomial { .. } => Err(ArdError::input("polynomial degree must be >= 1")),
            FeatureMapSpec::RbfBasis { lengthscale } if ls_ok(lengthscale) => Ok(()),
            FeatureMapSpec::RandomFourier { out_dim, lengthscale, .. } if *out_dim >= 1 && ls_ok(lengthscale) => Ok(()),
            _ => Err(ArdError::input(format!("invalid feature map {self:?}"))),
        }
    }

    /// Fills in a missing lengthscale from the standardized training inputs.
    pub fn resolve(&self, x_std: &DMatrix<f64>) -> Result<FeatureMapSpec> {
        self.validate()?;
        let fill = |l: &Option<f64>| -> Result<Option<f64>> {
            match l {
                Some(v) => Ok(Some(*v)),
                None => median_heuristic(x_std).map(Some),
            }
        };
        Ok(match self {
            FeatureMapSpec::RbfBasis { lengthscale } => FeatureMapSpec::RbfBasis {
                lengthscale: fill(lengthscale)?,
            },
            FeatureMapSpec::RandomFourier { out_dim, lengthscale, seed } => FeatureMapSpec::RandomFourier {
                out_dim: *out_dim,
                lengthscale: fill(lengthscale)?,
                seed: *seed,
            },
            other => other.clone(),
        })
    }
}

/// Column and target statistics from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerStats {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    // Constant columns keep their scale.
    let scale = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
    (mean, scale)
}

/// Population (divide-by-n) means and standard deviations of the training split.
pub fn standardize_fit(train: &Dataset) -> StandardizerStats {
    let x = train.x();
    let (means, scales) = (0..train.d())
        .map(|j| mean_and_scale(x.column(j).iter().copied()))
        .unzip();
    let (target_mean, target_scale) = mean_and_scale(train.y().iter().copied());
    StandardizerStats {
        means,
        scales,
        target_mean,
        target_scale,
    }
}

impl StandardizerStats {
    pub fn transform_x(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.means.len() {
            return Err(ArdError::input(format!(
                "expected {} raw features, got {}",
                self.means.len(),
                x_raw.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x_raw.nrows(), x_raw.ncols(), |i, j| {
            (x_raw[(i, j)] - self.means[j]) / self.scales[j]
        }))
    }

    pub fn transform_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.target_mean) / self.target_scale)
    }

    pub fn inverse_y(&self, v: f64) -> f64 {
        v * self.target_scale + self.target_mean
    }

    pub fn inverse_variance(&self, var: f64) -> f64 {
        var * self.target_scale * self.target_scale
    }
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j).iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

/// Median pairwise Euclidean distance over an evenly strided subset of at most
/// [`MEDIAN_HEURISTIC_ROWS`] rows.
pub fn median_heuristic(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(ArdError::input("median heuristic needs at least two rows"));
    }
    let stride = n.div_ceil(MEDIAN_HEURISTIC_ROWS);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push(sq_dist(x, i, x, j).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(ArdError::input("median pairwise distance is zero; set a lengthscale"))
    }
}

/// Standardizes `x_raw` with `stats`, then applies `spec`.
///
/// `spec` must be resolved (lengthscales present). `centers` are standardized
/// training rows and are required by the RBF basis.
pub fn apply_map(
    spec: &FeatureMapSpec,
    stats: &StandardizerStats,
    x_raw: &DMatrix<f64>,
    centers: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let x = stats.transform_x(x_raw)?;
    map_standardized(spec, &x, centers)
}

/// Applies `spec` to already standardized inputs.
pub fn map_standardized(
    spec: &FeatureMapSpec,
    x: &DMatrix<f64>,
    centers: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let unresolved = || ArdError::input("feature map lengthscale is unresolved");
    match spec {
        FeatureMapSpec::Identity {} => Ok(x.clone()),
        FeatureMapSpec::Polynomial { degree, include_bias } => {
            let offset = usize::from(*include_bias);
            let p = x.ncols();
            Ok(DMatrix::from_fn(x.nrows(), offset + p * degree, |i, c| {
                if c < offset {
                    return 1.0;
                }
                let k = c - offset;
                x[(i, k / degree)].powi((k % degree + 1) as i32)
            }))
        }
        FeatureMapSpec::RbfBasis { lengthscale } => {
            let ls = lengthscale.ok_or_else(unresolved)?;
            let c = centers.ok_or_else(|| ArdError::input("RBF basis requires centers"))?;
            if c.ncols() != x.ncols() {
                return Err(ArdError::input("RBF centers have the wrong dimension"));
            }
            let denom = 2.0 * ls * ls;
            Ok(DMatrix::from_fn(x.nrows(), c.nrows(), |i, j| (-sq_dist(x, i, c, j) / denom).exp()))
        }
        FeatureMapSpec::RandomFourier { out_dim, lengthscale, seed } => {
            let ls = lengthscale.ok_or_else(unresolved)?;
            let (w, b) = fourier_parameters(*out_dim, x.ncols(), ls, *seed);
            let amp = (2.0 / *out_dim as f64).sqrt();
            let proj = x * w.transpose();
            Ok(DMatrix::from_fn(x.nrows(), *out_dim, |i, k| amp * (proj[(i, k)] + b[k]).cos()))
        }
    }
}

/// Frequencies `W` (`out_dim × p`, entries `N(0, 1/ℓ²)`) and phases `b ~ U[0, 2π)`.
pub fn fourier_parameters(out_dim: usize, p: usize, lengthscale: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream(seed, Stream::Features);
    let normal = Normal::new(0.0, 1.0 / lengthscale).expect("positive lengthscale");
    let w = DMatrix::from_fn(out_dim, p, |_, _| normal.sample(&mut rng));
    let b = DVector::from_fn(out_dim, |_, _| rng.random::<f64>() * 2.0 * PI);
    (w, b)
}
