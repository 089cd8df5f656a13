//! GEM and dependent-GEM weight distributions: the Beta(1, M) transform of a
//! Gaussian process, stick-breaking, prior samplers and the closed-form
//! distributional quantities (marginal moments, joint first-pick law, EPPF,
//! size-biased permutations).

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec};
use crate::rng;
use crate::special::{ln_gamma, ln_norm_cdf, rising_factorial};
use crate::stats::RunningMoments;

/// Lower clamp applied to transformed breaks; the upper clamp is `1 - BREAK_EPS`.
pub const BREAK_EPS: f64 = 1e-12;

/// Precision parameter `M` of the GEM distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemParams {
    pub m: f64,
}

impl GemParams {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidArgument(format!("M must be positive, got {m}")));
        }
        Ok(Self { m })
    }

    /// Upper end of the dependence factor range, reached when the two breaks coincide.
    pub fn max_dependence(&self) -> f64 {
        2.0 * (self.m + 1.0) / (self.m + 2.0)
    }
}

/// Truncated stick-breaking weights plus the mass left on the stick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub weights: Vec<f64>,
    pub residual: f64,
}

impl WeightProfile {
    /// Wraps finite weights; the residual is whatever is missing from 1.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total} > 1")));
        }
        Ok(Self {
            weights,
            residual: (1.0 - total).max(0.0),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.residual
    }
}

/// Quantile function of `Be(1, M)`: `1 - (1 - u)^{1/M}`.
pub fn beta_inv_cdf(u: f64, params: &GemParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("u = {u} outside [0, 1]")));
    }
    Ok(-((-u).ln_1p() / params.m).exp_m1())
}

/// `g_{σ,M}(z) = F_M⁻¹(Φ(z/σ))`, clamped to `[1e-12, 1 - 1e-12]`.
///
/// Computed through `ln(1 - g) = ln Φ(-z/σ) / M` so that neither tail loses
/// precision before the clamp.
pub fn g_transform(z: f64, sigma_z: f64, params: &GemParams) -> f64 {
    let log_one_minus = ln_norm_cdf(-z / sigma_z) / params.m;
    (-log_one_minus.exp_m1()).clamp(BREAK_EPS, 1.0 - BREAK_EPS)
}

/// `p_j = v_j ∏_{l<j} (1 - v_l)`; the residual is `∏_j (1 - v_j)`.
pub fn stick_break(v: &[f64]) -> WeightProfile {
    let mut remaining = 1.0;
    let weights = v
        .iter()
        .map(|&vj| {
            let p = vj * remaining;
            remaining *= 1.0 - vj;
            p
        })
        .collect();
    WeightProfile {
        weights,
        residual: remaining,
    }
}

fn beta_one_m_draw<R: Rng + ?Sized>(params: &GemParams, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    (-(u.ln() / params.m).exp_m1()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Draws `j_max` i.i.d. `Be(1, M)` breaks and breaks the stick.
pub fn sample_gem<R: Rng + ?Sized>(params: &GemParams, j_max: usize, rng: &mut R) -> WeightProfile {
    let v: Vec<f64> = (0..j_max).map(|_| beta_one_m_draw(params, rng)).collect();
    stick_break(&v)
}

/// Dependent-GEM prior on a fixed set of covariates. The Gram matrix is
/// factorized once and reused for every draw.
#[derive(Clone, Debug)]
pub struct DepGem {
    kernel: KernelSpec,
    params: GemParams,
    xs: Vec<f64>,
    gram: GramMatrix,
}

impl DepGem {
    pub fn new(kernel: KernelSpec, params: GemParams, xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("need at least one covariate".into()));
        }
        let gram = gram(&kernel, xs)?;
        Ok(Self {
            kernel,
            params,
            xs: xs.to_vec(),
            gram,
        })
    }

    pub fn covariates(&self) -> &[f64] {
        &self.xs
    }

    /// One GP vector per species, returned as `breaks[site][species]`.
    pub fn sample_breaks<R: Rng + ?Sized>(&self, j_max: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.xs.len();
        let mut breaks = vec![vec![0.0; j_max]; n];
        let mut eps = vec![0.0; n];
        for j in 0..j_max {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            let z = self.gram.color(&eps);
            for (i, zi) in z.into_iter().enumerate() {
                breaks[i][j] = g_transform(zi, self.kernel.sigma_z, &self.params);
            }
        }
        breaks
    }

    /// Weight profile at every covariate.
    pub fn sample<R: Rng + ?Sized>(&self, j_max: usize, rng: &mut R) -> Vec<WeightProfile> {
        self.sample_breaks(j_max, rng)
            .iter()
            .map(|v| stick_break(v))
            .collect()
    }
}

pub fn sample_depgem<R: Rng + ?Sized>(
    spec: &KernelSpec,
    params: &GemParams,
    xs: &[f64],
    j_max: usize,
    rng: &mut R,
) -> Result<Vec<WeightProfile>> {
    Ok(DepGem::new(*spec, *params, xs)?.sample(j_max, rng))
}

/// Draws one pair `(V(x1), V(x2))` of dependent breaks whose latent Gaussians
/// have correlation `rho`.
pub fn sample_break_pair<R: Rng + ?Sized>(rho: f64, params: &GemParams, rng: &mut R) -> (f64, f64) {
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    let z2 = rho * e1 + (1.0 - rho * rho).max(0.0).sqrt() * e2;
    (g_transform(e1, 1.0, params), g_transform(z2, 1.0, params))
}

/// `E(p_j^n) = n!/M_(n) · (M/(M+n))^j`, with `j` 1-based.
pub fn gem_moment(j: u32, n: u32, params: &GemParams) -> f64 {
    let m = params.m;
    let n_fact: f64 = (1..=n).map(f64::from).product();
    n_fact / rising_factorial(m, n) * (m / (m + f64::from(n))).powi(j as i32)
}

/// `E(p_j) = M^{j-1}/(M+1)^j`.
pub fn gem_mean(j: u32, params: &GemParams) -> f64 {
    let m = params.m;
    (m / (m + 1.0)).powi(j as i32 - 1) / (m + 1.0)
}

/// `Var(p_j) = 2M^{j-1}/((M+1)(M+2)^j) - M^{2(j-1)}/(M+1)^{2j}`.
pub fn gem_var(j: u32, params: &GemParams) -> f64 {
    let m = params.m;
    2.0 * (m / (m + 2.0)).powi(j as i32 - 1) / ((m + 1.0) * (m + 2.0)) - gem_mean(j, params).powi(2)
}

/// `Cov(p_j, p_k)` for `j ≠ k`; the formula does not cover the diagonal.
pub fn gem_cov(j: u32, k: u32, params: &GemParams) -> Result<f64> {
    if j == k {
        return Err(Error::InvalidArgument(
            "covariance formula requires j != k; use gem_var".into(),
        ));
    }
    let m = params.m;
    let (hi, lo) = (j.max(k) as i32, j.min(k) as i32);
    let cross = (m / (m + 1.0)).powi(hi - lo) * (m / (m + 2.0)).powi(lo - 1) / ((m + 1.0) * (m + 2.0));
    Ok(cross - gem_mean(j, params) * gem_mean(k, params))
}

/// Monte Carlo budget shared by the simulation-based estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
    /// Number of independent RNG streams the work is split over. Results
    /// depend on this value but not on the size of the thread pool.
    pub chunks: usize,
}

impl MonteCarlo {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            chunks: 1,
        }
    }

    pub fn with_chunks(self, chunks: usize) -> Self {
        Self {
            chunks: chunks.max(1),
            ..self
        }
    }
}

/// Monte Carlo estimate of `μ_M` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceFactor {
    pub mu: f64,
    pub std_error: f64,
}

/// `μ_M(x1, x2) = (M+1)² E[V(x1) V(x2)]`, estimated by simulation.
pub fn dependence_factor(
    spec: &KernelSpec,
    params: &GemParams,
    x1: f64,
    x2: f64,
    mc: &MonteCarlo,
) -> Result<DependenceFactor> {
    if mc.samples < 1000 {
        return Err(Error::InvalidArgument("dependence factor needs at least 1000 samples".into()));
    }
    let rho = spec.family.correlation(x1 - x2, spec.lambda);
    let scale = (params.m + 1.0).powi(2);
    let parts = rng::par_chunks(mc.seed, mc.chunks, mc.samples, |rng, len| {
        let mut acc = RunningMoments::new();
        for _ in 0..len {
            let (a, b) = sample_break_pair(rho, params, rng);
            acc.push(scale * a * b);
        }
        acc
    });
    let mut acc = RunningMoments::new();
    parts.iter().for_each(|p| acc.merge(p));
    Ok(DependenceFactor {
        mu: acc.mean(),
        std_error: acc.std_error(),
    })
}

fn check_mu(params: &GemParams, mu: f64) -> Result<()> {
    let hi = params.max_dependence();
    if !(mu >= 1.0 - 1e-9 && mu <= hi + 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "dependence factor {mu} outside [1, {hi}]"
        )));
    }
    Ok(())
}

/// `P(Y_{1,1} = j, Y_{1,2} = k)` for first picks at two sites linked by `μ`.
/// Species indices are 1-based.
pub fn joint_first_pick_law(j: u32, k: u32, params: &GemParams, mu: f64) -> Result<f64> {
    if j == 0 || k == 0 {
        return Err(Error::InvalidArgument("species indices are 1-based".into()));
    }
    check_mu(params, mu)?;
    let m = params.m;
    let shared = m * m - 1.0 + mu;
    let denom = (m + 1.0).powi((j + k) as i32);
    if j == k {
        Ok(mu * shared.powi(j as i32 - 1) / denom)
    } else {
        let gap = j.abs_diff(k) as i32;
        Ok((m + 1.0 - mu) * m.powi(gap - 1) * shared.powi(j.min(k) as i32 - 1) / denom)
    }
}

/// `P(Y_{1,1} = Y_{1,2}) = μ / (2M + 2 - μ)`.
pub fn prob_equal_first_picks(params: &GemParams, mu: f64) -> Result<f64> {
    check_mu(params, mu)?;
    Ok(mu / (2.0 * params.m + 2.0 - mu))
}

/// `1/(2M+1)`, the first-pick coincidence probability under independence
/// (`μ = 1`). This is the chance that draws from two independent GEM(M)
/// realizations coincide; two draws from one realization coincide with
/// probability `1/(M+1)`.
pub fn prob_same_species_one_site(params: &GemParams) -> f64 {
    1.0 / (2.0 * params.m + 1.0)
}

/// Exchangeable partition probability of GEM(M):
/// `M^k / M_(n) · ∏ (n_j - 1)!`.
pub fn eppf_gem(cluster_sizes: &[u32], params: &GemParams) -> Result<f64> {
    if cluster_sizes.is_empty() || cluster_sizes.contains(&0) {
        return Err(Error::InvalidArgument("cluster sizes must be a nonempty list of positives".into()));
    }
    let m = params.m;
    let n: u32 = cluster_sizes.iter().sum();
    let k = cluster_sizes.len() as f64;
    let log_rising = ln_gamma(m + f64::from(n)) - ln_gamma(m);
    let log_fact: f64 = cluster_sizes.iter().map(|&s| ln_gamma(f64::from(s))).sum();
    Ok((k * m.ln() - log_rising + log_fact).exp())
}

/// All set partitions of `{0, …, n-1}` as restricted growth strings
/// (`labels[i]` is the block of element `i`, blocks numbered by first appearance).
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = if prefix.is_empty() { 0 } else { max + 1 };
        for b in 0..=next {
            prefix.push(b);
            rec(prefix, max.max(b), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(&mut Vec::with_capacity(n), 0, n, &mut out);
    }
    out
}

/// Block sizes of a restricted growth string.
pub fn block_sizes(labels: &[usize]) -> Vec<u32> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0u32; k];
    labels.iter().for_each(|&b| sizes[b] += 1);
    sizes
}

fn check_probability_vector(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("probabilities must be positive".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Size-biased permutation of the indices of `p`: each next index is chosen
/// with probability proportional to its weight among the indices left.
pub fn size_biased_permute<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    check_probability_vector(p)?;
    Ok(size_biased_prefix(p, p.len(), rng))
}

fn size_biased_prefix<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..p.len()).collect();
    let mut mass: f64 = 1.0;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut u = rng.random::<f64>() * mass;
        let mut pick = remaining.len() - 1;
        for (pos, &idx) in remaining.iter().enumerate() {
            if u < p[idx] {
                pick = pos;
                break;
            }
            u -= p[idx];
        }
        let idx = remaining.remove(pick);
        mass -= p[idx];
        out.push(idx);
    }
    out
}

/// Both sides of the generalized Pitman identity for a finite `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbpCheck {
    /// Exact sum of `f` over ordered tuples of distinct indices.
    pub lhs: f64,
    /// Monte Carlo mean over size-biased picks.
    pub rhs: f64,
    pub se: f64,
}

impl SbpCheck {
    pub fn z_score(&self) -> f64 {
        if self.se == 0.0 {
            if (self.lhs - self.rhs).abs() < 1e-12 { 0.0 } else { f64::INFINITY }
        } else {
            (self.rhs - self.lhs) / self.se
        }
    }
}

/// Compares `Σ_{distinct i_1..i_k} f(p_{i_1}, …, p_{i_k})` with the Monte
/// Carlo mean of `f(p̃_1..p̃_k) ∏_i (1 - p̃_1 - … - p̃_{i-1}) / p̃_i`.
pub fn sbp_k_identity_check<R, F>(
    p: &[f64],
    f: F,
    k: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<SbpCheck>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    check_probability_vector(p)?;
    if k == 0 || k > p.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={}", p.len())));
    }
    if n_mc < 1000 {
        return Err(Error::InvalidArgument("need at least 1000 Monte Carlo draws".into()));
    }
    let mut lhs = 0.0;
    let mut tuple = Vec::with_capacity(k);
    let mut used = vec![false; p.len()];
    enumerate_distinct(p, k, &mut tuple, &mut used, &f, &mut lhs);

    let mut acc = RunningMoments::new();
    let mut vals = vec![0.0; k];
    for _ in 0..n_mc {
        let picks = size_biased_prefix(p, k, rng);
        let mut weight = 1.0;
        let mut consumed = 0.0;
        for (slot, &idx) in picks.iter().enumerate() {
            vals[slot] = p[idx];
            weight *= (1.0 - consumed) / p[idx];
            consumed += p[idx];
        }
        acc.push(f(&vals) * weight);
    }
    Ok(SbpCheck {
        lhs,
        rhs: acc.mean(),
        se: acc.std_error(),
    })
}

fn enumerate_distinct<F: Fn(&[f64]) -> f64>(
    p: &[f64],
    k: usize,
    tuple: &mut Vec<f64>,
    used: &mut [bool],
    f: &F,
    acc: &mut f64,
) {
    if tuple.len() == k {
        *acc += f(tuple);
        return;
    }
    for i in 0..p.len() {
        if !used[i] {
            used[i] = true;
            tuple.push(p[i]);
            enumerate_distinct(p, k, tuple, used, f, acc);
            tuple.pop();
            used[i] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::kernels::KernelFamily;
    use crate::stats::{correlation, ks_pvalue, ks_statistic};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gem(m: f64) -> GemParams {
        GemParams::new(m).unwrap()
    }

    #[test]
    fn beta_quantile_edges() {
        assert_eq!(beta_inv_cdf(0.0, &gem(2.0)).unwrap(), 0.0);
        assert_eq!(beta_inv_cdf(1.0, &gem(2.0)).unwrap(), 1.0);
        assert_relative_eq!(beta_inv_cdf(0.5, &gem(1.0)).unwrap(), 0.5, max_relative = 1e-15);
        assert!(beta_inv_cdf(1.5, &gem(1.0)).is_err());
    }

    #[test]
    fn transform_values() {
        assert_relative_eq!(g_transform(0.0, 1.0, &gem(1.0)), 0.5, max_relative = 1e-15);
        assert_eq!(g_transform(-60.0, 1.0, &gem(1.0)), BREAK_EPS);
        assert_eq!(g_transform(60.0, 1.0, &gem(1.0)), 1.0 - BREAK_EPS);
        // 1 - (1 - Φ(1))^{1/2}
        assert_relative_eq!(
            g_transform(1.0, 1.0, &gem(2.0)),
            1.0 - 0.158_655_253_931_457_05f64.sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn stick_break_examples() {
        let p = stick_break(&[0.5, 0.5, 0.5]);
        assert_eq!(p.weights, [0.5, 0.25, 0.125]);
        assert_eq!(p.residual, 0.125);
        let p = stick_break(&[1.0 - 1e-12]);
        assert!((p.weights[0] - 1.0).abs() < 1e-11 && p.residual < 1e-11);
    }

    #[test]
    fn gem_moment_identities() {
        for m in [0.3, 1.0, 4.0] {
            let g = gem(m);
            for j in 1..6 {
                assert_eq!(gem_moment(j, 0, &g), 1.0);
                assert_relative_eq!(gem_moment(j, 1, &g), gem_mean(j, &g), max_relative = 1e-13);
                assert_relative_eq!(
                    gem_var(j, &g),
                    gem_moment(j, 2, &g) - gem_mean(j, &g).powi(2),
                    max_relative = 1e-10
                );
            }
            let total: f64 = (1..2000).map(|j| gem_mean(j, &g)).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        assert!(gem_cov(2, 2, &gem(1.0)).is_err());
        assert_relative_eq!(gem_mean(3, &gem(1.0)), 0.125);
    }

    #[test]
    fn gem_mean_decreases_in_index() {
        for m in [0.1, 1.0, 10.0, 100.0] {
            let g = gem(m);
            for j in 1..50 {
                assert!(gem_mean(j + 1, &g) < gem_mean(j, &g));
            }
        }
    }

    #[test]
    fn gem_sampling_matches_first_moments() {
        let mut rng = rng::stream(1, 0);
        let g = gem(6.0);
        let mut p1 = RunningMoments::new();
        for _ in 0..100_000 {
            p1.push(sample_gem(&g, 32, &mut rng).weights[0]);
        }
        assert!((p1.mean() - 1.0 / 7.0).abs() < 3.0 * p1.std_error());

        let g = gem(1.0);
        let mut p3 = RunningMoments::new();
        for _ in 0..1_000_000 {
            p3.push(sample_gem(&g, 3, &mut rng).weights[2]);
        }
        assert!((p3.mean() - 0.125).abs() < 3.0 * p3.std_error());

        let degenerate = sample_gem(&gem(1e-4), 10, &mut rng);
        assert!(degenerate.weights[0] > 0.99);
    }

    #[test]
    fn single_site_depgem_is_gem() {
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 2.0).unwrap();
        let g = gem(3.0);
        let dg = DepGem::new(spec, g, &[0.5]).unwrap();
        let mut rng = rng::stream(2, 0);
        let sample: Vec<f64> = (0..10_000)
            .map(|_| dg.sample_breaks(1, &mut rng)[0][0])
            .collect();
        let d = ks_statistic(&sample, |v| 1.0 - (1.0 - v).powf(3.0));
        assert!(ks_pvalue(d, sample.len()) > 0.01);
    }

    #[test]
    fn depgem_limits() {
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let g = gem(1.0);
        let far = DepGem::new(spec, g, &[0.0, 100.0]).unwrap();
        let mut rng = rng::stream(3, 0);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..20_000 {
            let br = far.sample_breaks(1, &mut rng);
            a.push(br[0][0]);
            b.push(br[1][0]);
        }
        let r = correlation(&a, &b);
        assert!(r.abs() < 3.0 / (a.len() as f64).sqrt(), "{r}");

        let near = DepGem::new(spec, g, &[1.0, 1.0 + 1e-9]).unwrap();
        for _ in 0..100 {
            let br = near.sample_breaks(3, &mut rng);
            for j in 0..3 {
                assert!((br[0][j] - br[1][j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn dependence_factor_endpoints_and_monotonicity() {
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let g = gem(1.0);
        let mc = MonteCarlo::new(200_000, 9).with_chunks(4);
        let eq = dependence_factor(&spec, &g, 0.0, 0.0, &mc).unwrap();
        assert!((eq.mu - 4.0 / 3.0).abs() < 3.0 * eq.std_error, "{eq:?}");
        let ind = dependence_factor(&spec, &g, 0.0, 100.0, &mc).unwrap();
        assert!((ind.mu - 1.0).abs() < 3.0 * ind.std_error, "{ind:?}");
        let mus: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&d| dependence_factor(&spec, &g, 0.0, d, &mc).unwrap().mu)
            .collect();
        assert!(mus[0] > mus[1] && mus[1] > mus[2], "{mus:?}");
        assert!(mus[1] > 1.0 && mus[1] < 4.0 / 3.0);
        // Same seed and chunking give the same estimate.
        assert_eq!(dependence_factor(&spec, &g, 0.0, 1.0, &mc).unwrap().mu, mus[1]);
    }

    #[test]
    fn joint_law_reductions() {
        let g = gem(1.7);
        for j in 1..5 {
            for k in 1..5 {
                let indep = joint_first_pick_law(j, k, &g, 1.0).unwrap();
                assert_relative_eq!(indep, gem_mean(j, &g) * gem_mean(k, &g), max_relative = 1e-12);
            }
        }
        let g = gem(1.0);
        let mu = 1.2;
        let total: f64 = (1..=200)
            .flat_map(|j| (1..=200).map(move |k| (j, k)))
            .map(|(j, k)| joint_first_pick_law(j, k, &g, mu).unwrap())
            .sum();
        assert!((1.0 - total).abs() < 1e-10);
        let diag: f64 = (1..=500).map(|j| joint_first_pick_law(j, j, &g, mu).unwrap()).sum();
        assert_relative_eq!(diag, prob_equal_first_picks(&g, mu).unwrap(), max_relative = 1e-12);
        assert!(joint_first_pick_law(1, 1, &g, 0.5).is_err());
    }

    #[test]
    fn joint_law_marginalizes_to_gem_mean() {
        for (m, mu) in [(1.0, 1.2), (0.5, 1.1), (3.0, 1.5)] {
            let g = gem(m);
            for j in 1..6 {
                let marg: f64 = (1..=500).map(|k| joint_first_pick_law(j, k, &g, mu).unwrap()).sum();
                assert!((marg - gem_mean(j, &g)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn same_species_probability() {
        assert_relative_eq!(prob_same_species_one_site(&gem(1.0)), 1.0 / 3.0);
        assert!(prob_same_species_one_site(&gem(1e9)) < 1e-8);
        let g = gem(0.5);
        assert_eq!(prob_same_species_one_site(&g), 0.5);
        let mut rng = rng::stream(4, 0);
        let mut independent = RunningMoments::new();
        let mut shared = RunningMoments::new();
        let pick = |rng: &mut rng::StreamRng, breaks: &mut Vec<f64>| {
            // Walks the stick, drawing breaks lazily so nothing is truncated.
            let mut j = 0;
            loop {
                if j == breaks.len() {
                    breaks.push(beta_one_m_draw(&g, rng));
                }
                if rng.random::<f64>() < breaks[j] {
                    return j;
                }
                j += 1;
            }
        };
        for _ in 0..1_000_000 {
            let (mut b1, mut b2) = (Vec::new(), Vec::new());
            let a = pick(&mut rng, &mut b1);
            let b = pick(&mut rng, &mut b2);
            independent.push(f64::from(u8::from(a == b)));
            let c = pick(&mut rng, &mut b1);
            shared.push(f64::from(u8::from(a == c)));
        }
        assert!((independent.mean() - 0.5).abs() < 3.0 * independent.std_error());
        assert!((shared.mean() - 1.0 / 1.5).abs() < 3.0 * shared.std_error());
    }

    #[test]
    fn eppf_small_cases() {
        let g = gem(1.0);
        assert_relative_eq!(eppf_gem(&[1], &g).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(eppf_gem(&[1, 1], &g).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(eppf_gem(&[2], &g).unwrap(), 0.5, max_relative = 1e-14);
        assert!(eppf_gem(&[], &g).is_err());
    }

    #[test]
    fn eppf_sums_to_one_and_is_exchangeable() {
        assert_eq!(set_partitions(4).len(), 15);
        assert_eq!(set_partitions(6).len(), 203);
        for m in [0.5, 1.0, 3.0] {
            let g = gem(m);
            for n in 1..=6 {
                let total: f64 = set_partitions(n)
                    .iter()
                    .map(|labels| eppf_gem(&block_sizes(labels), &g).unwrap())
                    .sum();
                assert!((total - 1.0).abs() < 1e-12, "n={n} m={m}: {total}");
            }
            let a = eppf_gem(&[3, 1, 2], &g).unwrap();
            let b = eppf_gem(&[1, 2, 3], &g).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn size_biased_permutation_basics() {
        let mut rng = rng::stream(5, 0);
        assert_eq!(size_biased_permute(&[1.0], &mut rng).unwrap(), [0]);
        assert!(size_biased_permute(&[0.5, 0.4], &mut rng).is_err());
        let mut first = RunningMoments::new();
        for _ in 0..100_000 {
            let perm = size_biased_permute(&[0.5, 0.5], &mut rng).unwrap();
            first.push(perm[0] as f64);
        }
        assert!((first.mean() - 0.5).abs() < 3.0 * first.std_error());
    }

    #[test]
    fn pitman_lemma_for_squares() {
        let mut rng = rng::stream(6, 0);
        let c = sbp_k_identity_check(&[0.7, 0.2, 0.1], |v| v[0] * v[0], 1, 100_000, &mut rng)
            .unwrap();
        assert_relative_eq!(c.lhs, 0.54, max_relative = 1e-12);
        assert!(c.z_score().abs() < 3.0);
    }

    #[test]
    fn sbp_identity_examples() {
        let mut rng = rng::stream(8, 0);
        let p = [0.5, 0.3, 0.2];
        let one = sbp_k_identity_check(&p, |v| v[0], 1, 10_000, &mut rng).unwrap();
        assert_relative_eq!(one.lhs, 1.0, max_relative = 1e-12);
        // f(p̃_1)/p̃_1 = 1 exactly, so the estimator has no variance.
        assert_relative_eq!(one.rhs, 1.0, max_relative = 1e-12);
        let prod = sbp_k_identity_check(&p, |v| v[0] * v[1], 2, 100_000, &mut rng).unwrap();
        assert_relative_eq!(prod.lhs, 0.62, max_relative = 1e-12);
        assert!(prod.z_score().abs() < 3.0);
        // Ordered pairs: 2·(0.25·0.09 + 0.25·0.04 + 0.09·0.04).
        let sq = sbp_k_identity_check(&p, |v| v[0] * v[0] * v[1] * v[1], 2, 100_000, &mut rng)
            .unwrap();
        assert_relative_eq!(sq.lhs, 0.0722, max_relative = 1e-12);
        assert!(sq.z_score().abs() < 4.0);
    }

    proptest! {
        #[test]
        fn stick_break_telescopes(v in proptest::collection::vec(1e-6..1.0 - 1e-6f64, 1..10_000)) {
            let p = stick_break(&v);
            prop_assert!((p.total() - 1.0).abs() <= 1e-12);
            prop_assert!(p.weights.iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn transform_is_monotone(z1 in -8.0..8.0f64, gap in 1e-3..5.0f64,
                                 sigma in 0.2..3.0f64, m in 0.1..20.0f64) {
            let g = gem(m);
            let (a, b) = (g_transform(z1, sigma, &g), g_transform(z1 + gap, sigma, &g));
            prop_assert!(a <= b);
            if a > BREAK_EPS && b < 1.0 - BREAK_EPS {
                prop_assert!(a < b);
            }
        }
    }
}
