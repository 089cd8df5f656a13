//! Independent Monte Carlo and quadrature checks of the closed-form results.
//!
//! The simulation side of every check only uses `sample_gem`, `DepGem`,
//! `stick_break` and the GP samplers, never the closed form it is compared to.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{simpson, simpson_prior_moments, simpson_variance_argmax};
use crate::data::SpeciesCountTable;
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelFamily, KernelSpec};
use crate::mcmc::{effective_sample_size, run_chain, HastingsMode, HyperPriors, Param, SamplerConfig};
use crate::predictive::{GpConditioner, PredictiveMode};
use crate::rng::{self, StreamRng};
use crate::special::rising_factorial;
use crate::stats::RunningMoments;
use crate::stickbreaking::{
    block_sizes, dependence_factor, eppf_gem, gem_cov, gem_mean, gem_moment, gem_var,
    joint_first_pick_law, prob_equal_first_picks, sample_gem, sbp_k_identity_check, set_partitions,
    DepGem, GemParams, MonteCarlo,
};

/// Default `|z|` threshold.
pub const Z_THRESHOLD: f64 = 4.0;

/// Pass rule of an oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `|z| ≤ threshold`.
    ZScore(f64),
    /// `|estimate - closed| ≤ tol`.
    Absolute(f64),
    /// `|estimate - closed| ≤ tol · |closed|`.
    Relative(f64),
    /// `estimate > 0`.
    Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    pub closed_form: f64,
    pub mc_estimate: f64,
    pub se: f64,
    pub z_score: f64,
    pub criterion: Criterion,
    pub pass: bool,
}

impl OracleResult {
    pub fn new(name: impl Into<String>, closed_form: f64, mc_estimate: f64, se: f64, criterion: Criterion) -> Self {
        let diff = mc_estimate - closed_form;
        let z_score = if se > 0.0 {
            diff / se
        } else if diff.abs() <= 1e-12 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        let pass = match criterion {
            Criterion::ZScore(t) => z_score.abs() <= t,
            Criterion::Absolute(tol) => diff.abs() <= tol,
            Criterion::Relative(tol) => diff.abs() <= tol * closed_form.abs(),
            Criterion::Positive => mc_estimate > 0.0,
        };
        Self {
            name: name.into(),
            closed_form,
            mc_estimate,
            se,
            z_score,
            criterion,
            pass,
        }
    }

    fn z(name: impl Into<String>, closed_form: f64, estimate: (f64, f64)) -> Self {
        Self::new(name, closed_form, estimate.0, estimate.1, Criterion::ZScore(Z_THRESHOLD))
    }
}

/// Sample mean with its standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut acc = RunningMoments::new();
    xs.iter().for_each(|x| acc.push(*x));
    (acc.mean(), acc.std_error())
}

/// Sample covariance with the standard error of the mean centered product.
fn cov_se(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean_se(x).0, mean_se(y).0);
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    mean_se(&prods)
}

fn check_samples(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidArgument(format!("need at least {min} Monte Carlo samples, got {n}")));
    }
    Ok(())
}

/// First `j_max` GEM weights of `mc.samples` independent communities,
/// returned per index.
fn gem_columns(params: &GemParams, j_max: usize, mc: &MonteCarlo) -> Vec<Vec<f64>> {
    let parts = rng::par_chunks(mc.seed, mc.chunks, mc.samples, |rng, len| {
        (0..len).map(|_| sample_gem(params, j_max, rng).weights).collect::<Vec<_>>()
    });
    let mut cols = vec![Vec::with_capacity(mc.samples); j_max];
    for w in parts.iter().flatten() {
        for (c, v) in cols.iter_mut().zip(w) {
            c.push(*v);
        }
    }
    cols
}

/// `E p_j`, `E p_j²` and `Var p_j` for `j ≤ j_max`, `Cov(p_j, p_k)` for
/// `j < k ≤ j_max`, and the zeroth moment.
pub fn verify_gem_moments(params: &GemParams, j_max: usize, mc: &MonteCarlo) -> Result<Vec<OracleResult>> {
    check_samples(mc.samples, 100_000)?;
    if j_max == 0 {
        return Err(Error::InvalidArgument("j_max must be positive".into()));
    }
    let m = params.m;
    let cols = gem_columns(params, j_max, mc);
    let mut out = vec![OracleResult::new(
        format!("GEM({m}) E p_1^0"),
        gem_moment(1, 0, params),
        cols[0].iter().map(|p| p.powi(0)).sum::<f64>() / mc.samples as f64,
        0.0,
        Criterion::Absolute(1e-12),
    )];
    for (j, col) in cols.iter().enumerate() {
        let j1 = j as u32 + 1;
        out.push(OracleResult::z(format!("GEM({m}) E p_{j1}"), gem_mean(j1, params), mean_se(col)));
        let sq: Vec<f64> = col.iter().map(|p| p * p).collect();
        out.push(OracleResult::z(format!("GEM({m}) E p_{j1}^2"), gem_moment(j1, 2, params), mean_se(&sq)));
        out.push(OracleResult::z(format!("GEM({m}) Var p_{j1}"), gem_var(j1, params), cov_se(col, col)));
    }
    for j in 0..j_max {
        for k in j + 1..j_max {
            out.push(OracleResult::z(
                format!("GEM({m}) Cov(p_{}, p_{})", j + 1, k + 1),
                gem_cov(j as u32 + 1, k as u32 + 1, params)?,
                cov_se(&cols[j], &cols[k]),
            ));
        }
    }
    Ok(out)
}

/// `E[V^k (1-V)^j] = α_(k) β_(j) / (α+β)_(k+j)` for `V ~ Be(α, β)`, against
/// double-exponential quadrature of the Beta density.
pub fn verify_beta_moments(alpha: f64, beta: f64, k: u32, j: u32) -> Result<OracleResult> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument("Beta parameters must be positive".into()));
    }
    let closed = rising_factorial(alpha, k) * rising_factorial(beta, j) / rising_factorial(alpha + beta, k + j);
    let ln_b = libm::lgamma(alpha) + libm::lgamma(beta) - libm::lgamma(alpha + beta);
    let (a, b) = (alpha + k as f64 - 1.0, beta + j as f64 - 1.0);
    let f = |u: f64| {
        if u <= 0.0 || u >= 1.0 {
            return 0.0;
        }
        (a * u.ln() + b * (-u).ln_1p() - ln_b).exp()
    };
    let quad = quadrature::double_exponential::integrate(f, 0.0, 1.0, 1e-14).integral;
    Ok(OracleResult::new(
        format!("Be({alpha},{beta}) E V^{k}(1-V)^{j}"),
        closed,
        quad,
        0.0,
        Criterion::Absolute(1e-10),
    ))
}

/// First species picked at each of two sites whose communities share the
/// breaks of one Dep-GEM draw. Breaks are generated in blocks until both
/// sites have picked, so there is no truncation.
fn first_picks(dg: &DepGem, rng: &mut StreamRng) -> (usize, usize) {
    const BLOCK: usize = 4;
    let mut picks = [None, None];
    let mut offset = 0;
    while picks.iter().any(Option::is_none) {
        let breaks = dg.sample_breaks(BLOCK, rng);
        for j in 0..BLOCK {
            for (site, pick) in picks.iter_mut().enumerate() {
                if pick.is_none() && rng.random::<f64>() < breaks[site][j] {
                    *pick = Some(offset + j + 1);
                }
            }
        }
        offset += BLOCK;
    }
    (picks[0].expect("picked"), picks[1].expect("picked"))
}

/// Empirical first-pick frequencies at `(x1, x2)` against the joint law with
/// `μ` taken from an independent simulation, plus the probability of equal
/// picks and, in the two limiting regimes, the limit of `μ` itself.
pub fn verify_joint_law(
    spec: &KernelSpec,
    params: &GemParams,
    x1: f64,
    x2: f64,
    mc: &MonteCarlo,
) -> Result<Vec<OracleResult>> {
    check_samples(mc.samples, 10_000)?;
    let d = (x1 - x2).abs();
    let tag = format!("M={} d={d}", params.m);
    let mu_mc = MonteCarlo::new(mc.samples, mc.seed.wrapping_add(1)).with_chunks(mc.chunks);
    let dep = dependence_factor(spec, params, x1, x2, &mu_mc)?;
    let hi = params.max_dependence();
    let mu = dep.mu.clamp(1.0, hi);

    let dg = DepGem::new(*spec, *params, &[x1, x2])?;
    let parts = rng::par_chunks(mc.seed, mc.chunks, mc.samples, |rng, len| {
        let mut counts = [[0u64; 3]; 3];
        let mut equal = 0u64;
        for _ in 0..len {
            let (a, b) = first_picks(&dg, rng);
            if a <= 3 && b <= 3 {
                counts[a - 1][b - 1] += 1;
            }
            equal += u64::from(a == b);
        }
        (counts, equal)
    });
    let n = mc.samples as f64;
    let mut counts = [[0u64; 3]; 3];
    let mut equal = 0u64;
    for (c, e) in &parts {
        for a in 0..3 {
            for b in 0..3 {
                counts[a][b] += c[a][b];
            }
        }
        equal += e;
    }

    // Sampling error of the frequency plus the error carried in through μ.
    let combined = |p: f64, dp_dmu: f64| (p * (1.0 - p) / n + (dp_dmu * dep.std_error).powi(2)).sqrt();
    let slope = |f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let h = 1e-6 * (hi - 1.0).max(1e-3);
        let (lo, up) = ((mu - h).max(1.0), (mu + h).min(hi));
        Ok((f(up)? - f(lo)?) / (up - lo))
    };

    let mut out = Vec::new();
    for j in 1..=3u32 {
        for k in 1..=3u32 {
            let law = |m: f64| joint_first_pick_law(j, k, params, m);
            let p = law(mu)?;
            let freq = counts[j as usize - 1][k as usize - 1] as f64 / n;
            out.push(OracleResult::new(
                format!("joint pick ({j},{k}) {tag}"),
                p,
                freq,
                combined(p, slope(&law)?),
                Criterion::ZScore(Z_THRESHOLD),
            ));
        }
    }
    let eq = |m: f64| prob_equal_first_picks(params, m);
    let p = eq(mu)?;
    out.push(OracleResult::new(
        format!("P(equal picks) {tag}"),
        p,
        equal as f64 / n,
        combined(p, slope(&eq)?),
        Criterion::ZScore(Z_THRESHOLD),
    ));

    let rho = spec.family.correlation(x1 - x2, spec.lambda);
    let limit = if rho >= 1.0 - 1e-12 {
        Some(hi)
    } else if rho <= 1e-12 {
        Some(1.0)
    } else {
        None
    };
    if let Some(limit) = limit {
        out.push(OracleResult::new(
            format!("mu limit {tag}"),
            limit,
            dep.mu,
            dep.std_error,
            Criterion::ZScore(3.0),
        ));
    }
    Ok(out)
}

/// A GEM realization grown on demand: once a uniform falls in the leftover
/// stick, a fresh GEM scaled by the leftover mass is appended.
struct LazyGem {
    weights: Vec<f64>,
    used: f64,
}

impl LazyGem {
    fn new() -> Self {
        Self {
            weights: Vec::new(),
            used: 0.0,
        }
    }

    fn pick(&mut self, params: &GemParams, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = 0;
        loop {
            while idx < self.weights.len() {
                acc += self.weights[idx];
                if u < acc {
                    return idx;
                }
                idx += 1;
            }
            let rest = 1.0 - self.used;
            let tail = sample_gem(params, 16, rng);
            for w in tail.weights {
                self.weights.push(rest * w);
                self.used += rest * w;
            }
            if rest <= f64::EPSILON {
                return idx;
            }
        }
    }
}

/// Block sizes of the partition induced by arbitrary labels, sorted in
/// decreasing order.
fn class_of(labels: &[usize]) -> Vec<u32> {
    let mut seen: Vec<usize> = Vec::new();
    let rgs: Vec<usize> = labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(k) => k,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect();
    let mut sizes = block_sizes(&rgs);
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Exact EPPF total over all set partitions of `[n]`, and Monte Carlo
/// frequencies of each block-size class from `n` picks per GEM community.
pub fn verify_eppf(params: &GemParams, n: usize, mc: &MonteCarlo) -> Result<Vec<OracleResult>> {
    check_samples(mc.samples, 10_000)?;
    if n == 0 || n > 8 {
        return Err(Error::InvalidArgument(format!("n = {n} must be in 1..=8")));
    }
    let m = params.m;
    let mut total = 0.0;
    let mut closed: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for labels in set_partitions(n) {
        let p = eppf_gem(&block_sizes(&labels), params)?;
        total += p;
        *closed.entry(class_of(&labels)).or_default() += p;
    }
    let mut out = vec![OracleResult::new(
        format!("EPPF M={m} n={n} sums to 1"),
        1.0,
        total,
        0.0,
        Criterion::Absolute(1e-12),
    )];
    let parts = rng::par_chunks(mc.seed, mc.chunks, mc.samples, |rng, len| {
        let mut tally: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        let mut picks = vec![0; n];
        for _ in 0..len {
            let mut gem = LazyGem::new();
            picks.iter_mut().for_each(|p| *p = gem.pick(params, rng));
            *tally.entry(class_of(&picks)).or_default() += 1;
        }
        tally
    });
    let mut tally: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            *tally.entry(k).or_default() += v;
        }
    }
    let n_mc = mc.samples as f64;
    for (class, p) in &closed {
        let freq = tally.get(class).copied().unwrap_or(0) as f64 / n_mc;
        out.push(OracleResult::new(
            format!("EPPF M={m} n={n} sizes {class:?}"),
            *p,
            freq,
            (p * (1.0 - p) / n_mc).sqrt(),
            Criterion::ZScore(Z_THRESHOLD),
        ));
    }
    Ok(out)
}

/// Size-biased permutation identity with `f(x) = ∏ x_i²`.
pub fn verify_sbp(p: &[f64], k: usize, n_mc: usize, rng: &mut StreamRng) -> Result<OracleResult> {
    let check = sbp_k_identity_check(p, |x| x.iter().map(|v| v * v).product(), k, n_mc, rng)?;
    Ok(OracleResult::new(
        format!("size-biased identity k={k} p={p:?}"),
        check.lhs,
        check.rhs,
        check.se,
        Criterion::ZScore(Z_THRESHOLD),
    ))
}

/// Number of GEM draws within L1 distance `eps` of `target`, counting the
/// mass beyond the target's length as distance.
pub fn verify_full_support_smoke(
    target: &[f64],
    params: &GemParams,
    eps: f64,
    n_mc: usize,
    rng: &mut StreamRng,
) -> Result<usize> {
    if target.is_empty() || target.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("target must be a non-empty probability vector".into()));
    }
    let mut hits = 0;
    for _ in 0..n_mc {
        let p = sample_gem(params, target.len(), rng);
        let dist: f64 = p.weights.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() + p.residual;
        hits += usize::from(dist < eps);
    }
    Ok(hits)
}

/// Prior mean and variance of the Simpson index against simulated GEM
/// communities, and the maximizer of the variance over `M`.
pub fn verify_simpson_moments(params: &GemParams, mc: &MonteCarlo) -> Result<Vec<OracleResult>> {
    check_samples(mc.samples, 10_000)?;
    let m = params.m;
    // Leftover mass after j_max breaks has mean (M/(M+1))^j_max.
    let j_max = ((1e-12f64).ln() / (m / (m + 1.0)).ln()).ceil().max(1.0) as usize;
    let parts = rng::par_chunks(mc.seed, mc.chunks, mc.samples, |rng, len| {
        (0..len).map(|_| simpson(&sample_gem(params, j_max, rng))).collect::<Vec<_>>()
    });
    let h: Vec<f64> = parts.into_iter().flatten().collect();
    let (mean, var) = simpson_prior_moments(params);
    Ok(vec![
        OracleResult::z(format!("Simpson mean M={m}"), mean, mean_se(&h)),
        OracleResult::z(format!("Simpson variance M={m}"), var, cov_se(&h, &h)),
    ])
}

pub fn verify_simpson_argmax() -> OracleResult {
    OracleResult::new("Simpson variance argmax over M", 0.49, simpson_variance_argmax(), 0.0, Criterion::Absolute(0.01))
}

/// Test-site moments from joint sampling of the GP at training and test
/// sites, against sampling the training sites first and then the test sites
/// from the conditional. `closed_form` holds the joint estimate.
pub fn verify_gp_conditioning(family: KernelFamily, mc: &MonteCarlo) -> Result<Vec<OracleResult>> {
    check_samples(mc.samples, 10_000)?;
    let spec = KernelSpec::new(family, 1.0, 1.3)?;
    let xs = [0.0, 0.7, 1.5];
    let xs_star = [0.4, 2.5];
    let all: Vec<f64> = xs.iter().chain(&xs_star).copied().collect();
    let joint_gram = gram(&spec, &all)?;
    let train_gram = gram(&spec, &xs)?;
    let cond = GpConditioner::new(family, spec.lambda, &xs, &xs_star, PredictiveMode::Joint)?;
    let run = |conditional: bool, seed: u64| -> Vec<[f64; 2]> {
        rng::par_chunks(seed, mc.chunks, mc.samples, |rng, len| {
            (0..len)
                .map(|_| {
                    if conditional {
                        let eps: Vec<f64> = (0..3).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                        let z = train_gram.color(&eps);
                        let s = cond.sample(&z, spec.sigma_z, rng);
                        [s[0], s[1]]
                    } else {
                        let eps: Vec<f64> = (0..5).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                        let z = joint_gram.color(&eps);
                        [z[3], z[4]]
                    }
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    };
    let joint = run(false, mc.seed);
    let conditional = run(true, mc.seed.wrapping_add(1));
    let col = |v: &[[f64; 2]], s: usize| v.iter().map(|r| r[s]).collect::<Vec<f64>>();
    let (j0, j1, c0, c1) = (col(&joint, 0), col(&joint, 1), col(&conditional, 0), col(&conditional, 1));
    let two_sample = |name: String, a: (f64, f64), b: (f64, f64)| {
        OracleResult::new(name, a.0, b.0, a.1.hypot(b.1), Criterion::ZScore(Z_THRESHOLD))
    };
    let tag = family.as_str();
    Ok(vec![
        two_sample(format!("GP conditioning {tag} mean Z*_1"), mean_se(&j0), mean_se(&c0)),
        two_sample(format!("GP conditioning {tag} mean Z*_2"), mean_se(&j1), mean_se(&c1)),
        two_sample(format!("GP conditioning {tag} var Z*_1"), cov_se(&j0, &j0), cov_se(&c0, &c0)),
        two_sample(format!("GP conditioning {tag} var Z*_2"), cov_se(&j1, &j1), cov_se(&c1, &c1)),
        two_sample(format!("GP conditioning {tag} cov Z*_1 Z*_2"), cov_se(&j0, &j1), cov_se(&c0, &c1)),
    ])
}

/// Settings of the prior-recovery run: zero counts, so the posterior of the
/// hyperparameters is their prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorRecovery {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub hastings: HastingsMode,
    pub priors: HyperPriors,
    pub n_sites: usize,
    pub n_species: usize,
}

impl Default for PriorRecovery {
    fn default() -> Self {
        Self {
            sweeps: 100_000,
            burn_in: 10_000,
            seed: 3,
            hastings: HastingsMode::Exact,
            priors: HyperPriors {
                a_z: 4.0,
                b_z: 3.0,
                a_lambda: 4.0,
                b_lambda: 3.0,
                a_m: 1.0,
                b_m: 1.0,
            },
            n_sites: 5,
            n_species: 3,
        }
    }
}

/// Posterior means of `σ_Z²`, `λ` and `M` on zero-count data against their
/// prior means, within 10% relative.
pub fn verify_prior_recovery(settings: &PriorRecovery) -> Result<Vec<OracleResult>> {
    let p = &settings.priors;
    if p.a_z <= 1.0 || p.a_lambda <= 1.0 {
        return Err(Error::InvalidArgument("inverse-gamma prior means need shape > 1".into()));
    }
    let xs: Vec<f64> = (0..settings.n_sites).map(|k| 0.5 * k as f64).collect();
    let table = SpeciesCountTable::zeros(xs, settings.n_species)?;
    let mut config = SamplerConfig::new(settings.sweeps, settings.burn_in, 1, settings.seed);
    config.priors = *p;
    config.hastings = settings.hastings;
    let chain = run_chain(&table, &config)?;
    let sigma2: Vec<f64> = chain.trace(Param::SigmaZ).iter().map(|s| s * s).collect();
    let tag = match settings.hastings {
        HastingsMode::Exact => "",
        HastingsMode::OmitTruncationCorrection => " (truncation correction omitted)",
    };
    let check = |name: &str, prior_mean: f64, trace: &[f64]| {
        let (mean, _) = mean_se(trace);
        let sd = cov_se(trace, trace).0.sqrt();
        let se = sd / effective_sample_size(trace).max(1.0).sqrt();
        OracleResult::new(format!("prior recovery {name}{tag}"), prior_mean, mean, se, Criterion::Relative(0.10))
    };
    Ok(vec![
        check("sigma_z^2", p.b_z / (p.a_z - 1.0), &sigma2),
        check("lambda", p.b_lambda / (p.a_lambda - 1.0), &chain.trace(Param::Lambda)),
        check("M", p.a_m / p.b_m, &chain.trace(Param::M)),
    ])
}

/// Budget and switches of the default suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Draws for scalar expectations.
    pub n_scalar: usize,
    /// Communities for partition tallies.
    pub n_partition: usize,
    pub prior_recovery: PriorRecovery,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            n_scalar: 1_000_000,
            n_partition: 100_000,
            prior_recovery: PriorRecovery::default(),
        }
    }
}

/// Fixed profiles used by the size-biased identity checks.
pub const SBP_PROFILES: [&[f64]; 3] = [&[0.5, 0.3, 0.2], &[0.4, 0.3, 0.2, 0.1], &[0.7, 0.1, 0.1, 0.05, 0.05]];

type Job<'a> = Box<dyn Fn() -> Result<Vec<OracleResult>> + Send + Sync + 'a>;

/// Every oracle, run in parallel on independent streams. Results come back
/// in a fixed order.
pub fn default_suite(options: &SuiteOptions) -> Result<Vec<OracleResult>> {
    let seed = options.seed;
    let scalar = |stream: u64| MonteCarlo::new(options.n_scalar, rng::stream_seed(seed, stream)).with_chunks(8);
    let partition = |stream: u64| MonteCarlo::new(options.n_partition, rng::stream_seed(seed, stream)).with_chunks(8);
    let mut jobs: Vec<Job> = Vec::new();
    let ms = [0.5, 1.0, 3.0];
    for (i, m) in ms.into_iter().enumerate() {
        let params = GemParams::new(m)?;
        jobs.push(Box::new(move || verify_gem_moments(&params, 4, &scalar(10 + i as u64))));
        jobs.push(Box::new(move || verify_simpson_moments(&params, &scalar(20 + i as u64))));
        jobs.push(Box::new(move || {
            let mut out = Vec::new();
            for n in 1..=6 {
                out.extend(verify_eppf(&params, n, &partition(30 + 10 * i as u64 + n as u64))?);
            }
            Ok(out)
        }));
    }
    jobs.push(Box::new(|| Ok(vec![verify_simpson_argmax()])));
    jobs.push(Box::new(|| {
        [(1.0, 2.0, 1, 0), (1.0, 1.0, 2, 0), (2.0, 3.0, 1, 1), (0.5, 0.7, 2, 3)]
            .into_iter()
            .map(|(a, b, k, j)| verify_beta_moments(a, b, k, j))
            .collect()
    }));
    let se = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0)?;
    let one = GemParams::new(1.0)?;
    for (i, d) in [0.0, 1.0, 100.0].into_iter().enumerate() {
        jobs.push(Box::new(move || verify_joint_law(&se, &one, 0.0, d, &scalar(70 + i as u64))));
    }
    for (i, family) in KernelFamily::ALL.into_iter().enumerate() {
        let mc = MonteCarlo::new(100_000, rng::stream_seed(seed, 80 + i as u64)).with_chunks(8);
        jobs.push(Box::new(move || verify_gp_conditioning(family, &mc)));
    }
    jobs.push(Box::new(move || {
        let mut rng = rng::stream(seed, 90);
        let mut out = Vec::new();
        for p in SBP_PROFILES {
            for k in 1..=3 {
                out.push(verify_sbp(p, k, 200_000, &mut rng)?);
            }
        }
        Ok(out)
    }));
    jobs.push(Box::new(move || {
        let mut rng = rng::stream(seed, 91);
        let mean: Vec<f64> = (1..=5).map(|j| gem_mean(j, &one)).collect();
        let skewed = [0.9, 0.1, 0.0, 0.0, 0.0];
        let small = GemParams::new(0.2)?;
        let mut out = Vec::new();
        for (name, target, params, eps) in [
            ("prior mean", &mean[..], one, 0.5),
            ("prior mean", &mean[..], one, 2.0),
            ("skewed", &skewed[..], small, 0.5),
        ] {
            let hits = verify_full_support_smoke(target, &params, eps, 100_000, &mut rng)?;
            out.push(OracleResult::new(
                format!("full support {name} eps={eps}"),
                0.0,
                hits as f64,
                0.0,
                Criterion::Positive,
            ));
        }
        Ok(out)
    }));
    let pr = options.prior_recovery;
    jobs.push(Box::new(move || verify_prior_recovery(&pr)));

    let results: Vec<Result<Vec<OracleResult>>> = jobs.par_iter().map(|job| job()).collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
