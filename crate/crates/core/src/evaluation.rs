//! Recovery metrics, predictive scores and influence diagnostics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ArdError, Result};
use crate::linalg::diag_quadratic_rows;
use crate::model::{ArdState, NoiseModel, Prediction, WeightPosterior};

/// Floor applied to relevance scores before normalization.
pub const ESS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceKind {
    Weights,
    Samples,
}

/// Nonnegative relevance scores: `1/γ_j` for weights, `1/λ_i` for samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    pub scores: Vec<f64>,
    pub kind: RelevanceKind,
}

impl RelevanceScores {
    pub fn new(scores: Vec<f64>, kind: RelevanceKind) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ArdError::input(format!("relevance score {i} is {}", scores[i])));
        }
        Ok(Self { scores, kind })
    }

    pub fn weights(state: &ArdState) -> Self {
        Self {
            scores: state.gamma.iter().map(|g| 1.0 / g).collect(),
            kind: RelevanceKind::Weights,
        }
    }

    /// Per-sample relevance; a shared variance gives uniform scores over `n` samples.
    pub fn samples(noise: &NoiseModel, n: usize) -> Self {
        Self {
            scores: noise.variances(n).iter().map(|l| 1.0 / l).collect(),
            kind: RelevanceKind::Samples,
        }
    }
}

/// Effective support size: perplexity of the normalized scores divided by their count.
pub fn ess(scores: &RelevanceScores) -> Result<f64> {
    let s = &scores.scores;
    if s.is_empty() || s.iter().all(|&v| v <= 0.0) {
        return Err(ArdError::input("ESS needs at least one strictly positive score"));
    }
    let floored: Vec<f64> = s.iter().map(|&v| v.max(ESS_EPS)).collect();
    let total: f64 = floored.iter().sum();
    let entropy: f64 = floored
        .iter()
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp() / s.len() as f64)
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fraction of `truth` found among the top-`k` scores.
pub fn topk_recall(scores: &[f64], truth: &[usize], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(ArdError::input("top-k recall needs a non-empty truth set"));
    }
    if k == 0 || k > scores.len() {
        return Err(ArdError::input(format!("k = {k} outside 1..={}", scores.len())));
    }
    let top = top_k(scores, k);
    let hits = truth.iter().filter(|t| top.contains(t)).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(ArdError::input(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean Gaussian negative log-likelihood of the targets under the predictions.
pub fn predictive_nll(preds: &[Prediction], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(ArdError::input("predictive NLL needs equal non-empty lengths"));
    }
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(targets) {
        if !(p.variance > 0.0) {
            return Err(ArdError::input(format!("nonpositive predictive variance {}", p.variance)));
        }
        let r = y - p.mean;
        total += 0.5 * (2.0 * std::f64::consts::PI * p.variance).ln() + r * r / (2.0 * p.variance);
    }
    Ok(total / preds.len() as f64)
}

/// Sample leverage `h_i = x_iᵀ Σ_θ x_i / λ_i`.
pub fn leverage(data: &Dataset, posterior: &WeightPosterior, noise: &NoiseModel) -> Vec<f64> {
    let q = diag_quadratic_rows(data.x(), &posterior.cov);
    let lambda = noise.variances(data.n());
    q.iter().zip(lambda.iter()).map(|(qi, li)| (qi / li).max(0.0)).collect()
}

/// Leave-one-out squared residuals `r_i² / (1 - h_i)²`; `+∞` where `h_i >= 1`.
pub fn loo_sq_residuals(residuals: &[f64], leverage: &[f64]) -> Vec<f64> {
    residuals
        .iter()
        .zip(leverage)
        .map(|(r, h)| {
            if *h >= 1.0 {
                f64::INFINITY
            } else {
                r * r / ((1.0 - h) * (1.0 - h))
            }
        })
        .collect()
}

/// Leverage-corrected noise proposal `r_i² / (1 - h_i)^p`; `+∞` where `h_i >= 1`.
pub fn studentized_lambda_update(residuals: &[f64], leverage: &[f64], power: f64) -> Result<Vec<f64>> {
    if !(power >= 2.0) {
        return Err(ArdError::input(format!("studentized power must be >= 2, got {power}")));
    }
    Ok(residuals
        .iter()
        .zip(leverage)
        .map(|(r, h)| {
            if *h >= 1.0 {
                f64::INFINITY
            } else {
                r * r / (1.0 - h).powf(power)
            }
        })
        .collect())
}

/// Per-sample influence diagnostics for a fitted state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub leverage: Vec<f64>,
    pub residuals: Vec<f64>,
    pub loo_sq_residuals: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Samples with `h_i >= 1`, whose LOO entry is the `+∞` sentinel.
    pub leverage_violations: Vec<usize>,
}

pub fn diagnostics(data: &Dataset, posterior: &WeightPosterior, noise: &NoiseModel) -> DiagnosticsReport {
    let h = leverage(data, posterior, noise);
    let r: DVector<f64> = data.y() - data.x() * &posterior.mu;
    let residuals: Vec<f64> = r.iter().copied().collect();
    let loo = loo_sq_residuals(&residuals, &h);
    let leverage_violations = h.iter().enumerate().filter(|(_, v)| **v >= 1.0).map(|(i, _)| i).collect();
    DiagnosticsReport {
        lambda: noise.variances(data.n()).iter().copied().collect(),
        leverage: h,
        residuals,
        loo_sq_residuals: loo,
        leverage_violations,
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ArdError::input("spearman needs two equal-length vectors of length >= 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(ArdError::input("spearman is undefined for constant input"));
    }
    Ok(cov / (va * vb).sqrt())
}
