use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use super::mh::{mh_step, Proposal};
use super::{
    column_log_likelihood, gp_column_log_density, AcceptanceRates, ChainSamples, Draw, LatentState,
    ProposalScales, SamplerConfig,
};
use crate::data::SpeciesCountTable;
use crate::error::{Error, Result};
use crate::kernels::{gram, lower_mul, GramMatrix, KernelSpec};
use crate::rng::{stream, StreamRng};
use crate::special::{ln_gamma_pdf, ln_inv_gamma_pdf, ln_norm_cdf, ln_norm_pdf, norm_quantile_from_log};

const TARGET_Z: f64 = 0.3;
const TARGET_SCALAR: f64 = 0.44;
/// Robbins–Monro gain `ADAPT_RATE · (t+1)^{-0.6}` on the log proposal scales.
const ADAPT_RATE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default)]
struct Counter {
    accepted: u64,
    proposed: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Clone, Debug)]
struct SpeciesBlock {
    n: Vec<f64>,
    tail: Vec<f64>,
    z: Vec<f64>,
    /// `L̃⁻¹ z` for the unit-variance Gram factor.
    w: Vec<f64>,
    w_sq: f64,
    loglik: f64,
    rng: StreamRng,
    scale: f64,
    counter: Counter,
    nan: u64,
}

impl SpeciesBlock {
    fn update(&mut self, chol: &DMatrix<f64>, sigma_z: f64, m: f64, gamma: Option<f64>) -> Result<()> {
        let half_prec = 0.5 / (sigma_z * sigma_z);
        let current = self.loglik - self.w_sq * half_prec;
        let mut cache: Option<(Vec<f64>, f64, f64)> = None;
        let (n, tail) = (&self.n, &self.tail);
        let out = mh_step(
            |w: &[f64]| {
                let z = lower_mul(chol, w);
                let ll = column_log_likelihood(&z, n, tail, sigma_z, m);
                let w_sq: f64 = w.iter().map(|v| v * v).sum();
                let target = ll - w_sq * half_prec;
                cache = Some((z, ll, w_sq));
                target
            },
            Proposal::Gaussian,
            &self.w,
            current,
            self.scale,
            &mut self.rng,
        )?;
        self.nan += u64::from(out.nan);
        self.counter.record(out.accepted);
        if out.accepted {
            let (z, ll, w_sq) = cache.expect("target evaluated");
            self.z = z;
            self.w = out.value;
            self.loglik = ll;
            self.w_sq = w_sq;
        }
        if let Some(g) = gamma {
            self.scale *= (g * (out.accept_prob - TARGET_Z)).exp();
        }
        Ok(())
    }
}

/// Incremental Metropolis-within-Gibbs sampler. Per-species caches (whitened
/// columns and likelihood terms) keep a sweep at `O(J I²)` plus one Gram
/// factorization per proposed `λ`.
pub struct Sampler {
    config: SamplerConfig,
    xs: Vec<f64>,
    blocks: Vec<SpeciesBlock>,
    sigma_z: f64,
    lambda: f64,
    m: f64,
    gram: GramMatrix,
    rng: StreamRng,
    s_sigma: f64,
    s_lambda: f64,
    s_m: f64,
    s_lambda_whitened: f64,
    s_m_ridge: f64,
    sigma_counter: Counter,
    lambda_counter: Counter,
    m_counter: Counter,
    lambda_whitened_counter: Counter,
    m_ridge_counter: Counter,
    nan: u64,
    iteration: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Sampler {
    pub fn new(table: &SpeciesCountTable, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let xs = table.covariates().to_vec();
        if xs.is_empty() || table.n_species() == 0 {
            return Err(Error::Validation("table needs at least one site and one species".into()));
        }
        let state = match &config.init {
            Some(s) => {
                s.validate()?;
                super::check_dims(s, table)?;
                s.clone()
            }
            None => LatentState::initial(&xs, table.n_species()),
        };
        let gram = gram(&KernelSpec::new(config.family, state.lambda, 1.0)?, &xs)?;
        let tails = table.tail_counts();
        let scales = ProposalScales::initial(table.n_species(), state.lambda);
        let blocks = (0..table.n_species())
            .map(|j| {
                let n: Vec<f64> = table.counts().iter().map(|r| r[j] as f64).collect();
                let tail: Vec<f64> = tails.iter().map(|r| r[j] as f64).collect();
                let z: Vec<f64> = state.z.column(j).iter().copied().collect();
                let w = gram.whiten(&z);
                let loglik = column_log_likelihood(&z, &n, &tail, state.sigma_z, state.m);
                SpeciesBlock {
                    n,
                    tail,
                    w_sq: w.iter().map(|v| v * v).sum(),
                    z,
                    w,
                    loglik,
                    rng: stream(config.seed, j as u64 + 1),
                    scale: scales.s_z[j],
                    counter: Counter::default(),
                    nan: 0,
                }
            })
            .collect();
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            rng: stream(config.seed, 0),
            xs,
            blocks,
            sigma_z: state.sigma_z,
            lambda: state.lambda,
            m: state.m,
            gram,
            s_sigma: scales.s_sigma,
            s_lambda: scales.s_lambda,
            s_m: scales.s_m,
            s_lambda_whitened: scales.s_lambda_whitened,
            s_m_ridge: scales.s_m_ridge,
            sigma_counter: Counter::default(),
            lambda_counter: Counter::default(),
            m_counter: Counter::default(),
            lambda_whitened_counter: Counter::default(),
            m_ridge_counter: Counter::default(),
            nan: 0,
            iteration: 0,
            pool,
            config,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn state(&self) -> LatentState {
        let n_sites = self.xs.len();
        let mut z = DMatrix::zeros(n_sites, self.blocks.len());
        for (j, b) in self.blocks.iter().enumerate() {
            z.column_mut(j).copy_from_slice(&b.z);
        }
        LatentState {
            z,
            sigma_z: self.sigma_z,
            lambda: self.lambda,
            m: self.m,
        }
    }

    pub fn log_likelihood(&self) -> f64 {
        self.blocks.iter().map(|b| b.loglik).sum()
    }

    /// Same value as [`super::log_posterior`] on [`Self::state`], from the caches.
    pub fn log_posterior(&self) -> f64 {
        let n_sites = self.xs.len();
        let gp: f64 = self
            .blocks
            .iter()
            .map(|b| gp_column_log_density(b.w_sq, n_sites, self.sigma_z, &self.gram))
            .sum();
        self.log_likelihood() + gp + self.config.priors.log_density(self.sigma_z, self.lambda, self.m)
    }

    pub fn scales(&self) -> ProposalScales {
        ProposalScales {
            s_z: self.blocks.iter().map(|b| b.scale).collect(),
            s_sigma: self.s_sigma,
            s_lambda: self.s_lambda,
            s_m: self.s_m,
            s_lambda_whitened: self.s_lambda_whitened,
            s_m_ridge: self.s_m_ridge,
        }
    }

    /// Acceptance rates since the last counter reset (the end of burn-in).
    pub fn acceptance(&self) -> AcceptanceRates {
        let z: Vec<f64> = self.blocks.iter().map(|b| b.counter.rate()).collect();
        AcceptanceRates {
            z_mean: z.iter().sum::<f64>() / z.len() as f64,
            z,
            sigma: self.sigma_counter.rate(),
            lambda: self.lambda_counter.rate(),
            m: self.m_counter.rate(),
            lambda_whitened: self.lambda_whitened_counter.rate(),
            m_ridge: self.m_ridge_counter.rate(),
            nan_rejections: self.nan + self.blocks.iter().map(|b| b.nan).sum::<u64>(),
        }
    }

    fn reset_counters(&mut self) {
        self.blocks.iter_mut().for_each(|b| b.counter = Counter::default());
        self.sigma_counter = Counter::default();
        self.lambda_counter = Counter::default();
        self.m_counter = Counter::default();
        self.lambda_whitened_counter = Counter::default();
        self.m_ridge_counter = Counter::default();
    }

    fn for_blocks<F>(&mut self, f: F) -> Result<()>
    where
        F: Fn(&mut SpeciesBlock) -> Result<()> + Sync + Send,
    {
        match &self.pool {
            Some(pool) => {
                let blocks = &mut self.blocks;
                pool.install(|| blocks.par_iter_mut().map(&f).collect::<Result<Vec<()>>>())?;
            }
            None => self.blocks.iter_mut().try_for_each(f)?,
        }
        Ok(())
    }

    /// One Gibbs sweep: every `Z_j`, then `σ_Z`, `λ` and `M`.
    pub fn sweep(&mut self) -> Result<()> {
        let gamma = (self.iteration < self.config.burn_in)
            .then(|| ADAPT_RATE * (self.iteration as f64 + 1.0).powf(-0.6));
        let updates = self.config.updates;
        if updates.z {
            let chol = self.gram.chol().clone();
            let (sigma_z, m) = (self.sigma_z, self.m);
            self.for_blocks(|b| b.update(&chol, sigma_z, m, gamma))?;
        }
        if updates.sigma {
            self.update_sigma(gamma)?;
            if self.config.extra_moves.rescale_sigma {
                self.rescale_sigma();
            }
        }
        if updates.lambda {
            self.update_lambda(gamma)?;
            if self.config.extra_moves.whitened_lambda {
                self.update_lambda_whitened(gamma)?;
            }
        }
        if updates.m {
            self.update_m(gamma)?;
            if self.config.extra_moves.ridge_m {
                self.update_m_ridge(gamma);
            }
        }
        self.iteration += 1;
        if self.iteration == self.config.burn_in {
            self.reset_counters();
        }
        Ok(())
    }

    fn update_sigma(&mut self, gamma: Option<f64>) -> Result<()> {
        let n_latent = (self.xs.len() * self.blocks.len()) as f64;
        let q: f64 = self.blocks.iter().map(|b| b.w_sq).sum();
        let priors = self.config.priors;
        let m = self.m;
        // σ_Z² ~ IG(a, b) seen as a density on σ_Z carries the Jacobian 2σ_Z.
        let hyper = |s: f64| {
            -n_latent * s.ln() - 0.5 * q / (s * s)
                + ln_inv_gamma_pdf(s * s, priors.a_z, priors.b_z)
                + (2.0 * s).ln()
        };
        let current = self.log_likelihood() + hyper(self.sigma_z);
        let mut cache = None;
        let (blocks, pool) = (&self.blocks, &self.pool);
        let out = mh_step(
            |s: &[f64]| {
                let lls = column_logliks(blocks, pool, s[0], m);
                let t = lls.iter().sum::<f64>() + hyper(s[0]);
                cache = Some(lls);
                t
            },
            Proposal::TruncatedGaussian(self.config.hastings),
            &[self.sigma_z],
            current,
            self.s_sigma,
            &mut self.rng,
        )?;
        self.nan += u64::from(out.nan);
        self.sigma_counter.record(out.accepted);
        if out.accepted {
            self.sigma_z = out.value[0];
            let lls = cache.expect("target evaluated");
            self.blocks.iter_mut().zip(lls).for_each(|(b, ll)| b.loglik = ll);
        }
        if let Some(g) = gamma {
            self.s_sigma *= (g * (out.accept_prob - TARGET_SCALAR)).exp();
        }
        Ok(())
    }

    /// Gibbs draw of `σ_Z` from its prior with `Z / σ_Z` held fixed.
    fn rescale_sigma(&mut self) {
        let priors = self.config.priors;
        let precision = Gamma::new(priors.a_z, 1.0 / priors.b_z)
            .expect("validated hyperparameters")
            .sample(&mut self.rng);
        let sigma_new = precision.recip().sqrt();
        let ratio = sigma_new / self.sigma_z;
        if !(ratio.is_finite() && ratio > 0.0) {
            return;
        }
        let m = self.m;
        for b in &mut self.blocks {
            b.z.iter_mut().for_each(|v| *v *= ratio);
            b.w.iter_mut().for_each(|v| *v *= ratio);
            b.w_sq *= ratio * ratio;
            b.loglik = column_log_likelihood(&b.z, &b.n, &b.tail, sigma_new, m);
        }
        self.sigma_z = sigma_new;
    }

    fn update_lambda(&mut self, gamma: Option<f64>) -> Result<()> {
        let priors = self.config.priors;
        let n_species = self.blocks.len() as f64;
        let two_var = 2.0 * self.sigma_z * self.sigma_z;
        let target = |log_det: f64, q: f64, lambda: f64| {
            -0.5 * n_species * log_det - q / two_var
                + ln_inv_gamma_pdf(lambda, priors.a_lambda, priors.b_lambda)
        };
        let q: f64 = self.blocks.iter().map(|b| b.w_sq).sum();
        let current = target(self.gram.log_det(), q, self.lambda);
        let mut cache = None;
        let (blocks, pool, xs, family) = (&self.blocks, &self.pool, &self.xs, self.config.family);
        let out = mh_step(
            |l: &[f64]| {
                let Ok(spec) = KernelSpec::new(family, l[0], 1.0) else {
                    return f64::NEG_INFINITY;
                };
                let Ok(gm) = gram(&spec, xs) else {
                    return f64::NEG_INFINITY;
                };
                let whiten = |b: &SpeciesBlock| {
                    let w = gm.whiten(&b.z);
                    let w_sq = w.iter().map(|v| v * v).sum::<f64>();
                    (w, w_sq)
                };
                let ws: Vec<(Vec<f64>, f64)> = match pool {
                    Some(p) => p.install(|| blocks.par_iter().map(whiten).collect()),
                    None => blocks.iter().map(whiten).collect(),
                };
                let q_new: f64 = ws.iter().map(|(_, s)| s).sum();
                let t = target(gm.log_det(), q_new, l[0]);
                cache = Some((gm, ws));
                t
            },
            Proposal::TruncatedGaussian(self.config.hastings),
            &[self.lambda],
            current,
            self.s_lambda,
            &mut self.rng,
        )?;
        self.nan += u64::from(out.nan);
        self.lambda_counter.record(out.accepted);
        if out.accepted {
            let (gm, ws) = cache.expect("target evaluated");
            self.lambda = out.value[0];
            self.gram = gm;
            for (b, (w, w_sq)) in self.blocks.iter_mut().zip(ws) {
                b.w = w;
                b.w_sq = w_sq;
            }
        }
        if let Some(g) = gamma {
            self.s_lambda *= (g * (out.accept_prob - TARGET_SCALAR)).exp();
        }
        Ok(())
    }

    fn update_m(&mut self, gamma: Option<f64>) -> Result<()> {
        let priors = self.config.priors;
        let sigma_z = self.sigma_z;
        let current = self.log_likelihood() + ln_gamma_pdf(self.m, priors.a_m, priors.b_m);
        let mut cache = None;
        let (blocks, pool) = (&self.blocks, &self.pool);
        let out = mh_step(
            |m: &[f64]| {
                let lls = column_logliks(blocks, pool, sigma_z, m[0]);
                let t = lls.iter().sum::<f64>() + ln_gamma_pdf(m[0], priors.a_m, priors.b_m);
                cache = Some(lls);
                t
            },
            Proposal::TruncatedGaussian(self.config.hastings),
            &[self.m],
            current,
            self.s_m,
            &mut self.rng,
        )?;
        self.nan += u64::from(out.nan);
        self.m_counter.record(out.accepted);
        if out.accepted {
            self.m = out.value[0];
            let lls = cache.expect("target evaluated");
            self.blocks.iter_mut().zip(lls).for_each(|(b, ll)| b.loglik = ll);
        }
        if let Some(g) = gamma {
            self.s_m *= (g * (out.accept_prob - TARGET_SCALAR)).exp();
        }
        Ok(())
    }

    fn update_lambda_whitened(&mut self, gamma: Option<f64>) -> Result<()> {
        let priors = self.config.priors;
        let eps: f64 = self.rng.sample(StandardNormal);
        let lambda_new = self.lambda * (self.s_lambda_whitened * eps).exp();
        let log_prior = |l: f64| ln_inv_gamma_pdf(l, priors.a_lambda, priors.b_lambda) + l.ln();
        let proposal = KernelSpec::new(self.config.family, lambda_new, 1.0)
            .and_then(|spec| gram(&spec, &self.xs))
            .ok()
            .map(|gm| {
                let (sigma_z, m) = (self.sigma_z, self.m);
                let chol = gm.chol();
                let eval = |b: &SpeciesBlock| {
                    let z = lower_mul(chol, &b.w);
                    let ll = column_log_likelihood(&z, &b.n, &b.tail, sigma_z, m);
                    (z, ll)
                };
                let cols: Vec<(Vec<f64>, f64)> = match &self.pool {
                    Some(p) => p.install(|| self.blocks.par_iter().map(eval).collect()),
                    None => self.blocks.iter().map(eval).collect(),
                };
                (gm, cols)
            });
        let log_alpha = match &proposal {
            Some((_, cols)) => {
                cols.iter().map(|c| c.1).sum::<f64>() - self.log_likelihood() + log_prior(lambda_new)
                    - log_prior(self.lambda)
            }
            None => f64::NEG_INFINITY,
        };
        let (accepted, prob) = self.accept(log_alpha);
        self.lambda_whitened_counter.record(accepted);
        if accepted {
            let (gm, cols) = proposal.expect("finite acceptance implies a proposal");
            self.lambda = lambda_new;
            self.gram = gm;
            for (b, (z, ll)) in self.blocks.iter_mut().zip(cols) {
                b.z = z;
                b.loglik = ll;
            }
        }
        if let Some(g) = gamma {
            self.s_lambda_whitened *= (g * (prob - TARGET_SCALAR)).exp();
        }
        Ok(())
    }

    /// `M → M' = M e^{sε}` with each `Z_ij` mapped so that
    /// `ln Φ(-Z'_ij/σ) / M' = ln Φ(-Z_ij/σ) / M`.
    fn update_m_ridge(&mut self, gamma: Option<f64>) {
        let priors = self.config.priors;
        let eps: f64 = self.rng.sample(StandardNormal);
        let m_new = self.m * (self.s_m_ridge * eps).exp();
        let ratio = m_new / self.m;
        let (sigma_z, half_prec) = (self.sigma_z, 0.5 / (self.sigma_z * self.sigma_z));
        let gram = &self.gram;
        let eval = |b: &SpeciesBlock| -> Option<(Vec<f64>, Vec<f64>, f64, f64, f64)> {
            let mut log_jac = 0.0;
            let mut z_new = Vec::with_capacity(b.z.len());
            for &z in &b.z {
                let t = z / sigma_z;
                let u = ln_norm_cdf(-t);
                let t_new = -norm_quantile_from_log(ratio * u);
                if !t_new.is_finite() {
                    return None;
                }
                log_jac += ratio.ln() + ln_norm_pdf(t) - u - ln_norm_pdf(t_new) + ratio * u;
                z_new.push(sigma_z * t_new);
            }
            let w = gram.whiten(&z_new);
            let w_sq: f64 = w.iter().map(|v| v * v).sum();
            let ll = column_log_likelihood(&z_new, &b.n, &b.tail, sigma_z, m_new);
            let delta = ll - b.loglik - (w_sq - b.w_sq) * half_prec + log_jac;
            Some((z_new, w, w_sq, ll, delta))
        };
        let cols: Option<Vec<_>> = match &self.pool {
            Some(p) => p.install(|| self.blocks.par_iter().map(eval).collect()),
            None => self.blocks.iter().map(eval).collect(),
        };
        let log_alpha = match &cols {
            Some(cols) => {
                cols.iter().map(|c| c.4).sum::<f64>()
                    + ln_gamma_pdf(m_new, priors.a_m, priors.b_m)
                    - ln_gamma_pdf(self.m, priors.a_m, priors.b_m)
                    + ratio.ln()
            }
            None => f64::NEG_INFINITY,
        };
        let (accepted, prob) = self.accept(log_alpha);
        self.m_ridge_counter.record(accepted);
        if accepted {
            self.m = m_new;
            for (b, (z, w, w_sq, ll, _)) in self.blocks.iter_mut().zip(cols.expect("accepted")) {
                b.z = z;
                b.w = w;
                b.w_sq = w_sq;
                b.loglik = ll;
            }
        }
        if let Some(g) = gamma {
            self.s_m_ridge *= (g * (prob - TARGET_SCALAR)).exp();
        }
    }

    fn accept(&mut self, log_alpha: f64) -> (bool, f64) {
        if log_alpha.is_nan() {
            self.nan += 1;
            return (false, 0.0);
        }
        if log_alpha >= 0.0 {
            return (true, 1.0);
        }
        let prob = log_alpha.exp();
        (self.rng.random::<f64>() < prob, prob)
    }
}

fn column_logliks(
    blocks: &[SpeciesBlock],
    pool: &Option<rayon::ThreadPool>,
    sigma_z: f64,
    m: f64,
) -> Vec<f64> {
    let eval = |b: &SpeciesBlock| column_log_likelihood(&b.z, &b.n, &b.tail, sigma_z, m);
    match pool {
        Some(pool) => pool.install(|| blocks.par_iter().map(eval).collect()),
        None => blocks.iter().map(eval).collect(),
    }
}

/// What a streamed run reports once all draws have been handed to the sink.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub n_draws: usize,
    pub acceptance: AcceptanceRates,
    pub scales: ProposalScales,
    pub wall_time_secs: f64,
}

/// Runs the chain and passes each stored draw to `sink` as soon as it is made.
pub fn run_chain_with<F>(table: &SpeciesCountTable, config: &SamplerConfig, mut sink: F) -> Result<RunSummary>
where
    F: FnMut(&Draw) -> Result<()>,
{
    let start = Instant::now();
    let mut sampler = Sampler::new(table, config.clone())?;
    let mut n_draws = 0;
    for t in 0..config.iterations {
        sampler.sweep()?;
        if t >= config.burn_in && (t - config.burn_in + 1).is_multiple_of(config.thin) {
            let draw = Draw {
                iteration: t + 1,
                state: sampler.state(),
                log_posterior: sampler.log_posterior(),
            };
            sink(&draw)?;
            n_draws += 1;
        }
    }
    Ok(RunSummary {
        n_draws,
        acceptance: sampler.acceptance(),
        scales: sampler.scales(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs the chain and keeps every stored draw in memory.
pub fn run_chain(table: &SpeciesCountTable, config: &SamplerConfig) -> Result<ChainSamples> {
    config.validate()?;
    let mut draws = Vec::with_capacity(config.n_draws());
    let summary = run_chain_with(table, config, |d| {
        draws.push(d.clone());
        Ok(())
    })?;
    Ok(ChainSamples {
        draws,
        config: config.clone(),
        acceptance: summary.acceptance,
        scales: summary.scales,
    })
}
