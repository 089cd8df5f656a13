//! Metropolis-within-Gibbs sampler for the dependent-GEM species model.
//!
//! The latent state is `θ = (Z, σ_Z, λ, M)`. Each sweep updates every species
//! column `Z_j` with a Gaussian proposal shaped like its prior covariance,
//! then `σ_Z`, `λ` and `M` with truncated-normal random walks.

mod diagnostics;
mod mh;
mod output;
mod sampler;

pub use diagnostics::{
    autocorrelation, diagnostics, effective_sample_size, write_trace_csv, ChainDiagnostics,
    ParamDiagnostics,
};
pub use mh::{mh_step, sample_truncated_normal, HastingsMode, MhOutcome, Proposal};
pub use output::{read_draws, write_draw, DrawRecord, RunManifest};
pub use sampler::{run_chain, run_chain_with, RunSummary, Sampler};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::data::SpeciesCountTable;
use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix, KernelFamily, KernelSpec};
use crate::special::{ln_gamma_pdf, ln_inv_gamma_pdf, ln_norm_cdf};
use crate::stickbreaking::BREAK_EPS;

/// Hyperparameters of `σ_Z² ~ IG(a_z, b_z)`, `λ ~ IG(a_λ, b_λ)` and
/// `M ~ Gamma(a_m, b_m)` (shape/rate).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPriors {
    pub a_z: f64,
    pub b_z: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_m: f64,
    pub b_m: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self {
            a_z: 1.0,
            b_z: 1.0,
            a_lambda: 1.0,
            b_lambda: 1.0,
            a_m: 1.0,
            b_m: 1.0,
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_z, self.b_z, self.a_lambda, self.b_lambda, self.a_m, self.b_m];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Validation(format!("hyperparameters must be positive: {self:?}")))
        }
    }

    /// Sum of the three hyperprior log densities, with `σ_Z²` as the variable.
    pub fn log_density(&self, sigma_z: f64, lambda: f64, m: f64) -> f64 {
        ln_inv_gamma_pdf(sigma_z * sigma_z, self.a_z, self.b_z)
            + ln_inv_gamma_pdf(lambda, self.a_lambda, self.b_lambda)
            + ln_gamma_pdf(m, self.a_m, self.b_m)
    }
}

/// `Z` is stored sites × species, so column `j` is the GP vector of species `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: DMatrix<f64>,
    pub sigma_z: f64,
    pub lambda: f64,
    pub m: f64,
}

impl LatentState {
    /// The neutral starting point: `Z = 0`, `σ_Z = 1`, `M = 1` and `λ` equal to
    /// half the covariate range (1 when all covariates coincide).
    pub fn initial(covariates: &[f64], n_species: usize) -> Self {
        let (lo, hi) = covariates
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let range = hi - lo;
        Self {
            z: DMatrix::zeros(covariates.len(), n_species),
            sigma_z: 1.0,
            lambda: if range > 0.0 { range / 2.0 } else { 1.0 },
            m: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("latent Z has non-finite entries".into()));
        }
        for (name, v) in [("sigma_z", self.sigma_z), ("lambda", self.lambda), ("m", self.m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_species(&self) -> usize {
        self.z.ncols()
    }
}

/// Random-walk standard deviations. `s_z[j]` acts on the whitened column of
/// species `j`, so the proposal on `Z_j` is `N(Z_j, s_z[j]² K̃_λ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub s_z: Vec<f64>,
    pub s_sigma: f64,
    pub s_lambda: f64,
    pub s_m: f64,
    /// Log-scale step of the whitened `λ` move.
    pub s_lambda_whitened: f64,
    /// Log-scale step of the break-preserving `M` move.
    pub s_m_ridge: f64,
}

impl ProposalScales {
    pub fn initial(n_species: usize, lambda: f64) -> Self {
        Self {
            s_z: vec![0.1; n_species],
            s_sigma: 0.1,
            s_lambda: 0.1 * lambda,
            s_m: 0.2,
            s_lambda_whitened: 0.1,
            s_m_ridge: 0.1,
        }
    }
}

/// Moves run after the random-walk update of the same block. Each one leaves
/// the posterior invariant; together they break the strong coupling between
/// `Z` and the hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtraMoves {
    /// Draws `σ_Z` from its prior with `Z/σ_Z` fixed. The likelihood only sees
    /// `Z/σ_Z` and `Z/σ_Z ~ N(0, K̃_λ)` whatever `σ_Z` is, so this is a Gibbs step.
    pub rescale_sigma: bool,
    /// Log-scale random walk on `λ` with the whitened columns `L̃_λ⁻¹ Z_j` held fixed.
    pub whitened_lambda: bool,
    /// Log-scale random walk on `M` that moves `Z` so that every break
    /// `V_ij = g(Z_ij)` stays put.
    pub ridge_m: bool,
}

impl Default for ExtraMoves {
    fn default() -> Self {
        Self {
            rescale_sigma: true,
            whitened_lambda: true,
            ridge_m: true,
        }
    }
}

impl ExtraMoves {
    pub fn none() -> Self {
        Self {
            rescale_sigma: false,
            whitened_lambda: false,
            ridge_m: false,
        }
    }
}

/// Which blocks a sweep updates. Blocks switched off keep their value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockMask {
    pub z: bool,
    pub sigma: bool,
    pub lambda: bool,
    pub m: bool,
}

impl Default for BlockMask {
    fn default() -> Self {
        Self {
            z: true,
            sigma: true,
            lambda: true,
            m: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub family: KernelFamily,
    pub priors: HyperPriors,
    /// Worker threads for the per-species updates; results do not depend on it.
    pub threads: usize,
    pub hastings: HastingsMode,
    pub updates: BlockMask,
    pub extra_moves: ExtraMoves,
    #[serde(skip)]
    pub init: Option<LatentState>,
}

impl SamplerConfig {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thin,
            seed,
            family: KernelFamily::SquaredExponential,
            priors: HyperPriors::default(),
            threads: 1,
            hastings: HastingsMode::Exact,
            updates: BlockMask::default(),
            extra_moves: ExtraMoves::default(),
            init: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Validation(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be at least 1".into()));
        }
        self.priors.validate()
    }

    /// Number of stored draws, `(iterations - burn_in) / thin`.
    pub fn n_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Post-adaptation acceptance rates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub z: Vec<f64>,
    pub z_mean: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub m: f64,
    pub lambda_whitened: f64,
    pub m_ridge: f64,
    /// Proposals rejected because the target evaluated to NaN.
    pub nan_rejections: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub state: LatentState,
    pub log_posterior: f64,
}

#[derive(Clone, Debug)]
pub struct ChainSamples {
    pub draws: Vec<Draw>,
    pub config: SamplerConfig,
    pub acceptance: AcceptanceRates,
    pub scales: ProposalScales,
}

impl ChainSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn trace(&self, param: Param) -> Vec<f64> {
        self.draws.iter().map(|d| param.get(d)).collect()
    }
}

/// Scalar quantities tracked along the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Param {
    SigmaZ,
    Lambda,
    M,
    LogPosterior,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::SigmaZ, Param::Lambda, Param::M, Param::LogPosterior];

    pub fn name(&self) -> &'static str {
        match self {
            Param::SigmaZ => "sigma_z",
            Param::Lambda => "lambda",
            Param::M => "m",
            Param::LogPosterior => "log_posterior",
        }
    }

    pub fn get(&self, draw: &Draw) -> f64 {
        match self {
            Param::SigmaZ => draw.state.sigma_z,
            Param::Lambda => draw.state.lambda,
            Param::M => draw.state.m,
            Param::LogPosterior => draw.log_posterior,
        }
    }
}

/// `(ln g, ln(1 - g))` for `g = g_{σ,M}(z)` with the same clamp as
/// [`crate::stickbreaking::g_transform`].
#[inline]
pub(crate) fn log_break(z: f64, sigma_z: f64, m: f64) -> (f64, f64) {
    let lo = BREAK_EPS.ln();
    let hi = (-BREAK_EPS).ln_1p();
    let log_rest = (ln_norm_cdf(-z / sigma_z) / m).clamp(lo, hi);
    ((-log_rest.exp_m1()).ln(), log_rest)
}

/// One species' contribution to the likelihood.
#[inline]
pub(crate) fn column_log_likelihood(z: &[f64], n: &[f64], tail: &[f64], sigma_z: f64, m: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..z.len() {
        if n[i] == 0.0 && tail[i] == 0.0 {
            continue;
        }
        let (lg, l1g) = log_break(z[i], sigma_z, m);
        acc += n[i] * lg + tail[i] * l1g;
    }
    acc
}

fn check_dims(state: &LatentState, table: &SpeciesCountTable) -> Result<()> {
    if state.n_sites() != table.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: table.n_sites(),
            got: state.n_sites(),
        });
    }
    if state.n_species() != table.n_species() {
        return Err(Error::DimensionMismatch {
            expected: table.n_species(),
            got: state.n_species(),
        });
    }
    Ok(())
}

/// `Σ_j Σ_i N_ij ln g(Z_ij) + N̄_{i,j+1} ln(1 - g(Z_ij))`.
pub fn log_likelihood(state: &LatentState, table: &SpeciesCountTable) -> Result<f64> {
    check_dims(state, table)?;
    let tails = table.tail_counts();
    let mut total = 0.0;
    for (i, (row, tail)) in table.counts().iter().zip(&tails).enumerate() {
        for j in 0..table.n_species() {
            let (n, t) = (row[j] as f64, tail[j] as f64);
            if n == 0.0 && t == 0.0 {
                continue;
            }
            let (lg, l1g) = log_break(state.z[(i, j)], state.sigma_z, state.m);
            total += n * lg + t * l1g;
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood evaluated to {total}")));
    }
    Ok(total)
}

fn gp_column_log_density(w_sq: f64, n: usize, sigma_z: f64, gram: &GramMatrix) -> f64 {
    let n = n as f64;
    -0.5 * n * (2.0 * PI).ln() - n * sigma_z.ln() - 0.5 * gram.log_det() - 0.5 * w_sq / (sigma_z * sigma_z)
}

/// Unnormalized log posterior: likelihood, GP prior of every column with
/// covariance `σ_Z² K̃_λ`, and the hyperpriors.
pub fn log_posterior(
    state: &LatentState,
    table: &SpeciesCountTable,
    priors: &HyperPriors,
    family: KernelFamily,
) -> Result<f64> {
    state.validate()?;
    let ll = log_likelihood(state, table)?;
    let unit = KernelSpec::new(family, state.lambda, 1.0)?;
    let gm = gram(&unit, table.covariates())?;
    let mut gp = 0.0;
    for col in state.z.column_iter() {
        let z: Vec<f64> = col.iter().copied().collect();
        gp += gp_column_log_density(gm.quad_form(&z), z.len(), state.sigma_z, &gm);
    }
    Ok(ll + gp + priors.log_density(state.sigma_z, state.lambda, state.m))
}
