//! TOML run configuration. Every field has a default; the defaults follow the
//! settings used for the published analysis (squared exponential kernel,
//! 50,000 iterations, burn-in 10,000, thinning 5, unit hyperpriors).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use depgem::analysis::DiversityIndex;
use depgem::data::{CountFormat, JitterSpec, LoadOptions};
use depgem::kernels::KernelFamily;
use depgem::mcmc::{ExtraMoves, HastingsMode, HyperPriors, SamplerConfig};
use depgem::predictive::PredictiveMode;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub priors: HyperPriors,
    pub mcmc: McmcConfig,
    pub data: DataConfig,
    pub jitter: JitterConfig,
    pub grid: GridConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kernel: KernelFamily,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::SquaredExponential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub threads: usize,
    pub hastings: HastingsMode,
    pub extra_moves: ExtraMoves,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            thin: 5,
            seed: 1,
            threads: 1,
            hastings: HastingsMode::Exact,
            extra_moves: ExtraMoves::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `long` or `wide`; detected from the header when absent.
    pub format: Option<CountFormat>,
    /// Species with fewer individuals in total are dropped.
    pub min_total: u64,
}

/// Gaussian covariate jitter. Off unless `sigma` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self { sigma: None, seed: 1 }
    }
}

/// Prediction grid; `min` and `max` default to the covariate range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min: None,
            max: None,
            points: depgem::analysis::DEFAULT_EC_GRID_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// `simpson`, `shannon` or `good:ALPHA,BETA`.
    pub index: String,
    pub ec_levels: Vec<f64>,
    /// Sites with raw covariate at or below this value form the baseline.
    pub baseline_max: f64,
    pub predictive_mode: PredictiveMode,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            index: "simpson".into(),
            ec_levels: vec![10.0, 20.0, 50.0],
            baseline_max: 0.0,
            predictive_mode: PredictiveMode::Pointwise,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("depgem-out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler_config().validate()?;
        if self.mcmc.threads == 0 {
            return Err(CliError::Config("mcmc.threads must be at least 1".into()));
        }
        if let Some(s) = self.jitter.sigma {
            JitterSpec::new(s, self.jitter.seed)?;
        }
        if self.grid.points < 2 {
            return Err(CliError::Config("grid.points must be at least 2".into()));
        }
        if let (Some(lo), Some(hi)) = (self.grid.min, self.grid.max) {
            if !(lo < hi) {
                return Err(CliError::Config(format!("grid.min ({lo}) must be below grid.max ({hi})")));
            }
        }
        self.index()?;
        if let Some(x) = self.analysis.ec_levels.iter().find(|x| !(0.0..=100.0).contains(*x)) {
            return Err(CliError::Config(format!("EC level {x} outside [0, 100]")));
        }
        Ok(())
    }

    pub fn index(&self) -> Result<DiversityIndex> {
        Ok(self.analysis.index.parse()?)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let m = &self.mcmc;
        let mut c = SamplerConfig::new(m.iterations, m.burn_in, m.thin, m.seed);
        c.family = self.model.kernel;
        c.priors = self.priors;
        c.threads = m.threads;
        c.hastings = m.hastings;
        c.extra_moves = m.extra_moves;
        c
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.data.format,
            min_total: self.data.min_total,
        }
    }

    pub fn jitter_spec(&self) -> Option<JitterSpec> {
        self.jitter.sigma.map(|sigma| JitterSpec {
            sigma,
            seed: self.jitter.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.sampler_config().n_draws(), 8000);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_errors() {
        let cfg = RunConfig::from_toml(
            "[model]\nkernel = \"ou\"\n[mcmc]\niterations = 200\nburn_in = 100\n[analysis]\nindex = \"good:2,0\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.kernel, KernelFamily::OrnsteinUhlenbeck);
        assert_eq!(cfg.mcmc.thin, 5);
        assert!(RunConfig::from_toml("[mcmc]\niterations = 10\nburn_in = 20\n").is_err());
        assert!(RunConfig::from_toml("[mcmc]\nsteps = 10\n").is_err());
        assert!(RunConfig::from_toml("[analysis]\nindex = \"gini\"\n").is_err());
        assert!(RunConfig::from_toml("[analysis]\nec_levels = [120.0]\n").is_err());
        assert!(RunConfig::from_toml("[jitter]\nsigma = -1.0\n").is_err());
    }
}
