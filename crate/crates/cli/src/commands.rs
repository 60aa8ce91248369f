use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jointard::datagen::{contaminate_targets, gen_sparse_linear, GroundTruth, SyntheticSpec};
use jointard::evaluation::{diagnostics, topk_recall, RelevanceScores};
use jointard::optim::TraceEntry;
use jointard::{train, Dataset, PipelineConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SweepConfig};
use crate::error::{CliError, CliResult};
use crate::io::{cell, read_dataset, read_inputs, read_strict, write_csv, write_dataset, write_json};
use crate::record::ResultRecord;

/// Options shared by every subcommand.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub strict: bool,
    pub threads: Option<usize>,
}

impl Globals {
    fn out_file(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::input(format!("{}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }
}

/// `truth.json` as written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub theta: Vec<f64>,
    pub support: Vec<usize>,
    pub outliers: Vec<usize>,
    pub sigma: f64,
    pub multiplier: f64,
}

/// Generator flags; unset ones fall back to the config file, then defaults.
#[derive(Debug, Default)]
pub struct SynthArgs {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub sparsity: Option<f64>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub m: Option<f64>,
    pub n_test: Option<usize>,
}

pub fn synth(g: &Globals, a: &SynthArgs) -> CliResult<()> {
    let mut spec: SyntheticSpec = match &g.config {
        Some(p) => read_strict(p)?,
        None => SyntheticSpec::default(),
    };
    macro_rules! apply {
        ($($field:ident <- $arg:ident),*) => {
            $(if let Some(v) = a.$arg { spec.$field = v; })*
        };
    }
    apply!(n <- n, d <- d, sparsity_ratio <- sparsity, contamination_ratio <- rho, sigma <- sigma, multiplier <- m, n_test <- n_test);
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    let draw = gen_sparse_linear(&spec)?;
    write_dataset(&g.out_file("train.csv")?, &draw.train)?;
    if let Some(test) = &draw.test {
        write_dataset(&g.out_file("test.csv")?, test)?;
    }
    let GroundTruth { theta_true, support, outliers, .. } = draw.truth;
    let truth = TruthFile { theta: theta_true, support, outliers, sigma: spec.sigma, multiplier: spec.multiplier };
    write_json(&g.out_file("truth.json")?, &truth)
}

fn write_trace(path: &Path, trace: &[TraceEntry]) -> CliResult<()> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|t| {
            vec![
                t.iteration.to_string(),
                cell(t.nll),
                cell(t.max_rel_change),
                t.guard_activations.to_string(),
                t.lambda_updated.to_string(),
                opt(t.inner_iterations.map(|v| v.to_string())),
                opt(t.inner_converged.map(|v| v.to_string())),
                opt(t.surrogate.map(cell)),
            ]
        })
        .collect();
    let header = [
        "iteration",
        "nll",
        "max_rel_change",
        "guard_activations",
        "lambda_updated",
        "inner_iterations",
        "inner_converged",
        "surrogate",
    ];
    write_csv(path, &header, &rows)
}

pub struct FitArgs {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

pub fn fit(g: &Globals, a: &FitArgs) -> CliResult<()> {
    let mut cfg: RunConfig = match &g.config {
        Some(p) => read_strict(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.reseed(s);
    }
    if a.train.is_some() {
        cfg.data.train = a.train.clone();
    }
    if a.test.is_some() {
        cfg.data.test = a.test.clone();
    }
    cfg.validate()?;
    let train_path = cfg.data.train.clone().ok_or_else(|| CliError::input("no training data: pass --train or set data.train"))?;
    let raw = read_dataset(&train_path)?;
    let test = cfg.data.test.as_deref().map(read_dataset).transpose()?;
    if let Some(t) = &test {
        if t.d() != raw.d() {
            return Err(CliError::input(format!("test set has {} features, training set {}", t.d(), raw.d())));
        }
    }

    let start = Instant::now();
    let trained = match train(&raw, &cfg.pipeline()) {
        Ok(t) => t,
        Err(failure) => {
            write_trace(&g.out_file("trace.csv")?, &failure.trace)?;
            return Err(failure.error.into());
        }
    };
    let metrics = test.as_ref().map(|t| trained.model.evaluate(t)).transpose()?;
    let elapsed = start.elapsed().as_secs_f64();

    write_trace(&g.out_file("trace.csv")?, &trained.fit.trace)?;
    let record = ResultRecord::new(cfg, &trained, metrics, elapsed)?;
    write_json(&g.out_file("result.json")?, &record)?;
    eprintln!(
        "{} after {} iterations in {elapsed:.2}s",
        if record.summary.converged { "converged" } else { "not converged" },
        record.summary.iterations
    );
    if g.strict && !record.summary.converged {
        return Err(CliError::Numerical(format!(
            "fit did not converge within {} iterations (--strict)",
            record.config.fit.max_iter
        )));
    }
    Ok(())
}

fn load_record(path: &Path) -> CliResult<ResultRecord> {
    read_strict(path)
}

pub fn predict(g: &Globals, model: &Path, data: &Path) -> CliResult<()> {
    let m = load_record(model)?.model.to_model()?;
    let preds = m.predict(&read_inputs(data)?)?;
    let rows: Vec<Vec<String>> = preds.iter().map(|p| vec![cell(p.mean), cell(p.variance)]).collect();
    write_csv(&g.out_file("predictions.csv")?, &["mean", "variance"], &rows)
}

pub fn eval(g: &Globals, model: &Path, data: &Path) -> CliResult<()> {
    let m = load_record(model)?.model.to_model()?;
    let metrics = m.evaluate(&read_dataset(data)?)?;
    write_json(&g.out_file("metrics.json")?, &metrics)
}

pub fn diagnose(g: &Globals, model: &Path, data: &Path, truth: Option<&Path>) -> CliResult<()> {
    let record = load_record(model)?;
    let m = record.model.to_model()?;
    let raw = read_dataset(data)?;
    if raw.n() != m.n_train {
        return Err(CliError::input(format!(
            "{} has {} rows but the model was trained on {}",
            data.display(),
            raw.n(),
            m.n_train
        )));
    }
    let phi = m.featurize(raw.x())?;
    let mut y = m.stats.transform_y(raw.y());
    let mut outliers = None;
    if let Some(spec) = &record.config.contamination {
        let (yc, idx) = contaminate_targets(&y, spec)?;
        y = yc;
        outliers = Some(idx);
    }
    if let Some(p) = truth {
        let t: TruthFile = read_strict(p)?;
        outliers = Some(t.outliers);
    }
    let design = Dataset::new(phi, y)?;
    let rep = diagnostics(&design, &m.posterior, &m.state.noise);
    if !rep.leverage_violations.is_empty() {
        eprintln!("warning: {} samples have leverage >= 1", rep.leverage_violations.len());
    }
    let mut header = vec!["index", "residual", "leverage", "loo_sq_residual", "lambda"];
    if outliers.is_some() {
        header.push("is_outlier_truth");
    }
    let rows: Vec<Vec<String>> = (0..design.n())
        .map(|i| {
            let mut r = vec![
                i.to_string(),
                cell(rep.residuals[i]),
                cell(rep.leverage[i]),
                cell(rep.loo_sq_residuals[i]),
                cell(rep.lambda[i]),
            ];
            if let Some(o) = &outliers {
                r.push(u8::from(o.contains(&i)).to_string());
            }
            r
        })
        .collect();
    write_csv(&g.out_file("diagnostics.csv")?, &header, &rows)
}

struct Job {
    i1: usize,
    i2: usize,
    method: usize,
    mode: usize,
    trial: usize,
}

fn sweep_row(cfg: &SweepConfig, job: &Job) -> Vec<String> {
    let (a1, a2) = (cfg.axis1[job.i1], cfg.axis2[job.i2]);
    let method = cfg.methods[job.method];
    let mode = cfg.noise_modes[job.mode];
    let na = || "NA".to_string();
    let mut row = vec![cell(a1), cell(a2), job.trial.to_string()];
    let pipeline = PipelineConfig {
        fit: jointard::FitConfig { method, noise_mode: mode, ..cfg.fit.clone() },
        features: cfg.features.clone(),
        lambda_base: cfg.lambda_base,
        contamination: None,
    };
    let outcome = (|| -> Result<(Vec<String>, bool), String> {
        let draw = gen_sparse_linear(&cfg.cell_spec(a1, a2, job.trial)).map_err(|e| e.to_string())?;
        let t = train(&draw.train, &pipeline).map_err(|e| e.to_string())?;
        let test = draw.test.as_ref().ok_or("no test split")?;
        let metrics = t.model.evaluate(test).map_err(|e| e.to_string())?;
        let truth = &draw.truth;
        let w = RelevanceScores::weights(&t.model.state);
        let wr = topk_recall(&w.scores, &truth.support, truth.support.len()).map_err(|e| e.to_string())?;
        let or = if truth.outliers.is_empty() {
            na()
        } else {
            let lam = t.model.state.noise.variances(draw.train.n());
            cell(topk_recall(lam.as_slice(), &truth.outliers, truth.outliers.len()).map_err(|e| e.to_string())?)
        };
        Ok((vec![cell(wr), or, cell(metrics.rmse), cell(metrics.nll)], t.fit.converged))
    })();
    let status = match outcome {
        Ok((vals, converged)) => {
            row.extend(vals);
            if converged { "ok".to_string() } else { "not_converged".to_string() }
        }
        Err(e) => {
            row.extend((0..4).map(|_| na()));
            format!("error: {e}")
        }
    };
    row.extend([method.name().to_string(), mode_name(mode).to_string(), status]);
    row
}

fn mode_name(m: jointard::NoiseMode) -> &'static str {
    match m {
        jointard::NoiseMode::Homo => "homo",
        jointard::NoiseMode::Hetero => "hetero",
    }
}

pub fn sweep(g: &Globals) -> CliResult<()> {
    let mut cfg: SweepConfig = match &g.config {
        Some(p) => read_strict(p)?,
        None => SweepConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut jobs = Vec::new();
    for i1 in 0..cfg.axis1.len() {
        for i2 in 0..cfg.axis2.len() {
            for method in 0..cfg.methods.len() {
                for mode in 0..cfg.noise_modes.len() {
                    for trial in 0..cfg.trials {
                        jobs.push(Job { i1, i2, method, mode, trial });
                    }
                }
            }
        }
    }
    let threads = g.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    // Jobs are generated in key order and collect() keeps that order.
    let rows: Vec<Vec<String>> = pool.install(|| jobs.par_iter().map(|j| sweep_row(&cfg, j)).collect());
    let header = [
        "axis1",
        "axis2",
        "trial",
        "weight_recall",
        "outlier_recall",
        "rmse",
        "nll",
        "method",
        "noise_mode",
        "status",
    ];
    write_csv(&g.out_file("sweep.csv")?, &header, &rows)
}
