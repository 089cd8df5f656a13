//! Synthetic count tables drawn from the dependent-GEM model.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{jitter_covariates, JitterSpec, SpeciesCountTable};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::rng;
use crate::stickbreaking::{DepGem, GemParams, WeightProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub n_sites: usize,
    pub n_species: usize,
    pub m: f64,
    pub family: KernelFamily,
    pub lambda: f64,
    pub sigma_z: f64,
    /// Individuals observed at each site.
    pub n_per_site: u64,
    pub x_min: f64,
    pub x_max: f64,
    /// Sites placed at covariate 0 ahead of the evenly spaced ones.
    pub n_baseline: usize,
    /// Jitter applied before sampling the process; `None` samples on the raw
    /// covariates, which must then be distinct.
    pub jitter_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n_sites: 22,
            n_species: 100,
            m: 30.0,
            family: KernelFamily::SquaredExponential,
            lambda: 5000.0,
            sigma_z: 1.0,
            n_per_site: 1000,
            x_min: 0.0,
            x_max: 22_000.0,
            n_baseline: 10,
            jitter_sigma: Some(50.0),
            seed: 1,
        }
    }
}

/// A simulated table together with the weights that generated it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    /// Counts in generative species order, with the raw covariates.
    pub table: SpeciesCountTable,
    /// Covariates the process was sampled at.
    pub sampled_covariates: Vec<f64>,
    pub weights: Vec<WeightProfile>,
}

impl SimulationSpec {
    pub fn covariates(&self) -> Vec<f64> {
        let spread = self.n_sites.saturating_sub(self.n_baseline);
        let mut xs = vec![0.0; self.n_baseline.min(self.n_sites)];
        xs.extend((0..spread).map(|k| {
            if self.n_baseline > 0 {
                self.x_min + (self.x_max - self.x_min) * (k + 1) as f64 / spread as f64
            } else if spread > 1 {
                self.x_min + (self.x_max - self.x_min) * k as f64 / (spread - 1) as f64
            } else {
                self.x_min
            }
        }));
        xs
    }
}

/// Draws one weight profile per site and `n_per_site` individuals among the
/// first `n_species` species, proportional to their weights.
pub fn simulate(spec: &SimulationSpec) -> Result<SimulatedData> {
    if spec.n_sites == 0 || spec.n_species == 0 {
        return Err(Error::InvalidArgument("need at least one site and one species".into()));
    }
    let raw = spec.covariates();
    let sampled = match spec.jitter_sigma {
        Some(s) => jitter_covariates(&raw, &JitterSpec::new(s, spec.seed)?),
        None => raw.clone(),
    };
    let kernel = KernelSpec::new(spec.family, spec.lambda, spec.sigma_z)?;
    let prior = DepGem::new(kernel, GemParams::new(spec.m)?, &sampled)?;
    let mut rng = rng::stream(spec.seed, 1);
    let weights = prior.sample(spec.n_species, &mut rng);
    let counts = weights
        .iter()
        .map(|w| multinomial(spec.n_per_site, &w.weights, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let table = SpeciesCountTable::new(
        (0..spec.n_sites).map(|i| format!("site{:03}", i + 1)).collect(),
        raw,
        (0..spec.n_species).map(|j| format!("sp{:03}", j + 1)).collect(),
        counts,
    )?;
    Ok(SimulatedData {
        table,
        sampled_covariates: sampled,
        weights,
    })
}

/// Multinomial draw with probabilities proportional to `weights`, by
/// successive conditional binomials.
fn multinomial<R: rand::Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut mass: f64 = weights.iter().sum();
    let mut left = n;
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        if left == 0 || mass <= 0.0 {
            out.push(0);
            continue;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, p)
            .map_err(|e| Error::NonFinite(format!("binomial: {e}")))?
            .sample(rng);
        out.push(k);
        left -= k;
        mass -= w;
    }
    // Rounding in `mass` can leave a few individuals unassigned.
    if left > 0 {
        let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        out[last] += left;
    }
    Ok(out)
}
