//! JSON configuration schemas for `fit` and `sweep`.

use std::path::PathBuf;

use jointard::datagen::{ContaminationSpec, SyntheticSpec};
use jointard::features::FeatureMapSpec;
use jointard::{FitConfig, LambdaBasePolicy, Method, NoiseMode, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Everything `fit` needs. Echoed into every result record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub features: FeatureMapSpec,
    pub lambda_base: LambdaBasePolicy,
    /// Additive contamination of the standardized training targets.
    pub contamination: Option<ContaminationSpec>,
    pub data: DataPaths,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.fit.validate()?;
        self.features.validate()?;
        if let Some(c) = &self.contamination {
            c.validate()?;
        }
        Ok(())
    }

    /// Overrides every seed in the configuration.
    pub fn reseed(&mut self, seed: u64) {
        self.fit.seed = seed;
        if let FeatureMapSpec::RandomFourier { seed: s, .. } = &mut self.features {
            *s = seed;
        }
        if let Some(c) = &mut self.contamination {
            c.seed = seed;
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            fit: self.fit.clone(),
            features: self.features.clone(),
            lambda_base: self.lambda_base,
            contamination: self.contamination,
        }
    }
}

/// Which pair of generator settings the sweep grid varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// axis1 = sparsity ratio, axis2 = inlier noise σ.
    Weight,
    /// axis1 = contamination ratio ρ, axis2 = outlier multiplier m.
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Grid,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub noise_modes: Vec<NoiseMode>,
    /// Generator settings not varied by the grid.
    pub base: SyntheticSpec,
    /// Solver settings; `method` and `noise_mode` come from the lists above.
    pub fit: FitConfig,
    pub features: FeatureMapSpec,
    pub lambda_base: LambdaBasePolicy,
    /// Trial `t` uses data seed `seed + t` in every cell.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: Grid::Data,
            axis1: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            axis2: vec![2.0, 5.0, 10.0, 20.0],
            trials: 10,
            methods: vec![Method::Em],
            noise_modes: vec![NoiseMode::Hetero, NoiseMode::Homo],
            base: SyntheticSpec::default(),
            fit: FitConfig::default(),
            features: FeatureMapSpec::default(),
            lambda_base: LambdaBasePolicy::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |what: &str| Err(CliError::input(format!("sweep field `{what}` must not be empty")));
        if self.axis1.is_empty() {
            return bad("axis1");
        }
        if self.axis2.is_empty() {
            return bad("axis2");
        }
        if self.trials == 0 {
            return bad("trials");
        }
        if self.methods.is_empty() {
            return bad("methods");
        }
        if self.noise_modes.is_empty() {
            return bad("noise_modes");
        }
        if self.base.n_test == 0 {
            return Err(CliError::input("sweep field `base.n_test` must be positive"));
        }
        self.fit.validate()?;
        self.features.validate()?;
        for &a in &self.axis1 {
            for &b in &self.axis2 {
                self.cell_spec(a, b, 0).validate()?;
            }
        }
        Ok(())
    }

    pub fn cell_spec(&self, a1: f64, a2: f64, trial: usize) -> SyntheticSpec {
        let mut s = self.base.clone();
        match self.grid {
            Grid::Weight => {
                s.sparsity_ratio = a1;
                s.sigma = a2;
            }
            Grid::Data => {
                s.contamination_ratio = a1;
                s.multiplier = a2;
            }
        }
        s.seed = self.seed.wrapping_add(trial as u64);
        s
    }
}
