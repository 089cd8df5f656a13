//! Posterior predictive weights at unobserved covariates by Gaussian process
//! conditioning.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cross_covariance, gram, GramMatrix, KernelFamily, KernelSpec};
use crate::mcmc::Draw;
use crate::rng;
use crate::stickbreaking::{g_transform, stick_break, GemParams, WeightProfile};

/// Relative minimum distance between test and training covariates.
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-9;

/// Test covariates kept away from every training covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGrid {
    points: Vec<f64>,
    /// Indices of points that were moved off a training covariate.
    shifted: Vec<usize>,
}

impl PredictiveGrid {
    /// Uses a minimum separation of `1e-9` times the covariate range.
    pub fn new(points: Vec<f64>, training: &[f64]) -> Result<Self> {
        let (lo, hi) = range(points.iter().chain(training));
        let scale = if hi > lo { hi - lo } else { 1.0 };
        Self::with_min_separation(points, training, DEFAULT_MIN_SEPARATION * scale)
    }

    /// `n` evenly spaced points on `[min, max]`.
    pub fn linspace(min: f64, max: f64, n: usize, training: &[f64]) -> Result<Self> {
        if n == 0 || !(max >= min) {
            return Err(Error::InvalidArgument(format!(
                "grid needs n > 0 and max >= min, got n={n}, [{min}, {max}]"
            )));
        }
        let points = (0..n)
            .map(|k| if n == 1 { min } else { min + (max - min) * k as f64 / (n - 1) as f64 })
            .collect();
        Self::new(points, training)
    }

    /// Test points closer than `min_sep` to a training covariate are pushed
    /// `min_sep` away from it.
    pub fn with_min_separation(mut points: Vec<f64>, training: &[f64], min_sep: f64) -> Result<Self> {
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("grid points must be finite".into()));
        }
        if !(min_sep > 0.0) {
            return Err(Error::InvalidArgument("minimum separation must be positive".into()));
        }
        let mut shifted = Vec::new();
        for (k, x) in points.iter_mut().enumerate() {
            let mut moved = false;
            // Each push moves strictly upward, so this terminates.
            while let Some(t) = training.iter().find(|t| (**t - *x).abs() < min_sep) {
                *x = x.max(*t) + min_sep;
                moved = true;
            }
            if moved {
                log::debug!("grid point {k} coincides with a training covariate; moved to {x}");
                shifted.push(k);
            }
        }
        if !shifted.is_empty() {
            log::info!("{} grid points shifted off training covariates", shifted.len());
        }
        Ok(Self { points, shifted })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn shifted(&self) -> &[usize] {
        &self.shifted
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn range<'a>(xs: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `m* = K(X*,X) K(X,X)⁻¹ z` and `K* = K(X*,X*) - K(X*,X) K(X,X)⁻¹ K(X,X*)`,
/// with `K*` symmetrized.
pub fn gp_condition(
    spec: &KernelSpec,
    xs: &[f64],
    xs_star: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if z.len() != xs.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: z.len(),
        });
    }
    let gm = gram(spec, xs)?;
    let a = projection(&gm, spec, xs, xs_star);
    let w = gm.whiten(z);
    let mean = (a.transpose() * nalgebra::DVector::from_column_slice(&w)).as_slice().to_vec();
    let k_star = cross_covariance(spec, xs_star, xs_star) - a.transpose() * &a;
    Ok((mean, (&k_star + k_star.transpose()) * 0.5))
}

/// `L⁻¹ K(X, X*)`.
fn projection(gm: &GramMatrix, spec: &KernelSpec, xs: &[f64], xs_star: &[f64]) -> DMatrix<f64> {
    let cross = cross_covariance(spec, xs, xs_star);
    gm.chol()
        .solve_lower_triangular(&cross)
        .expect("factor has positive diagonal")
}

/// How test-site latent values are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    /// Full conditional covariance across test sites.
    Joint,
    /// Conditional marginals only. Pointwise summaries such as diversity
    /// curves are unaffected, and a λ change costs `O(I I*)` instead of `O(I*³)`.
    #[default]
    Pointwise,
}

/// Conditioning operators for one `λ`, built on the unit-variance kernel so
/// that `σ_Z` can vary between draws.
pub struct GpConditioner {
    gram: GramMatrix,
    /// `L⁻¹ K̃(X, X*)`, sites × test points.
    a: DMatrix<f64>,
    noise: Noise,
}

enum Noise {
    Joint(DMatrix<f64>),
    Pointwise(Vec<f64>),
}

impl GpConditioner {
    pub fn new(family: KernelFamily, lambda: f64, xs: &[f64], xs_star: &[f64], mode: PredictiveMode) -> Result<Self> {
        let spec = KernelSpec::new(family, lambda, 1.0)?;
        let gm = gram(&spec, xs)?;
        let a = projection(&gm, &spec, xs, xs_star);
        let noise = match mode {
            PredictiveMode::Pointwise => Noise::Pointwise(
                a.column_iter()
                    .map(|c| (1.0 - c.norm_squared()).max(0.0).sqrt())
                    .collect(),
            ),
            PredictiveMode::Joint => {
                let k = cross_covariance(&spec, xs_star, xs_star) - a.transpose() * &a;
                let k = (&k + k.transpose()) * 0.5;
                Noise::Joint(GramMatrix::from_values(k, xs_star)?.chol().clone())
            }
        };
        Ok(Self { gram: gm, a, noise })
    }

    /// Draws latent test values given one training column `z`.
    pub fn sample<R: Rng + ?Sized>(&self, z: &[f64], sigma_z: f64, rng: &mut R) -> Vec<f64> {
        let w = nalgebra::DVector::from_vec(self.gram.whiten(z));
        let mean = self.a.tr_mul(&w);
        let n = mean.len();
        let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        match &self.noise {
            Noise::Pointwise(sd) => (0..n).map(|s| mean[s] + sigma_z * sd[s] * eps[s]).collect(),
            Noise::Joint(l) => {
                let e = crate::kernels::lower_mul(l, &eps);
                (0..n).map(|s| mean[s] + sigma_z * e[s]).collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictiveOptions {
    pub family: KernelFamily,
    pub mode: PredictiveMode,
    pub seed: u64,
}

impl PredictiveOptions {
    pub fn new(family: KernelFamily, seed: u64) -> Self {
        Self {
            family,
            mode: PredictiveMode::Pointwise,
            seed,
        }
    }
}

/// Predictive weight profiles of one posterior draw, one per grid point.
fn predictive_profiles(
    draw: &Draw,
    cond: &GpConditioner,
    n_star: usize,
    rng: &mut rng::StreamRng,
) -> Vec<WeightProfile> {
    let state = &draw.state;
    let params = GemParams { m: state.m };
    let mut breaks = vec![vec![0.0; state.n_species()]; n_star];
    for (j, col) in state.z.column_iter().enumerate() {
        let z: Vec<f64> = col.iter().copied().collect();
        let z_star = cond.sample(&z, state.sigma_z, rng);
        for (s, zs) in z_star.into_iter().enumerate() {
            breaks[s][j] = g_transform(zs, state.sigma_z, &params);
        }
    }
    breaks.iter().map(|v| stick_break(v)).collect()
}

const CHUNK: usize = 64;

/// Applies `f(draw_index, profiles)` to the predictive profiles of every
/// draw and returns the results in draw order. Draw `t` uses RNG stream
/// `t + 1`, so the output does not depend on the thread count. Conditioning
/// operators are shared between draws with the same `λ`.
pub fn map_predictive<T, F>(
    draws: &[Draw],
    training_xs: &[f64],
    grid: &PredictiveGrid,
    options: &PredictiveOptions,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Vec<WeightProfile>) -> T + Sync,
{
    map_predictive_at(draws, 0, training_xs, grid, options, f)
}

/// As [`map_predictive`] for a slice starting at draw index `first` of a
/// longer chain, so that a chain can be processed in pieces with the same
/// result.
pub fn map_predictive_at<T, F>(
    draws: &[Draw],
    first: usize,
    training_xs: &[f64],
    grid: &PredictiveGrid,
    options: &PredictiveOptions,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Vec<WeightProfile>) -> T + Sync,
{
    if draws.is_empty() {
        return Err(Error::Validation("chain has no draws".into()));
    }
    if let Some(d) = draws.iter().find(|d| d.state.n_sites() != training_xs.len()) {
        return Err(Error::DimensionMismatch {
            expected: training_xs.len(),
            got: d.state.n_sites(),
        });
    }
    let mut out = Vec::with_capacity(draws.len());
    for (c, chunk) in draws.chunks(CHUNK).enumerate() {
        let mut lambdas: Vec<f64> = chunk.iter().map(|d| d.state.lambda).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        let conds = lambdas
            .par_iter()
            .map(|&l| GpConditioner::new(options.family, l, training_xs, grid.points(), options.mode))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<T> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, draw)| {
                let t = first + c * CHUNK + k;
                let idx = lambdas
                    .binary_search_by(|l| l.total_cmp(&draw.state.lambda))
                    .expect("lambda cached");
                let mut rng = rng::stream(options.seed, t as u64 + 1);
                f(t, predictive_profiles(draw, &conds[idx], grid.len(), &mut rng))
            })
            .collect();
        out.extend(results);
    }
    Ok(out)
}

/// Predictive profiles for every draw: `result[t][s]` is draw `t` at grid point `s`.
pub fn sample_predictive(
    draws: &[Draw],
    training_xs: &[f64],
    grid: &PredictiveGrid,
    options: &PredictiveOptions,
) -> Result<Vec<Vec<WeightProfile>>> {
    map_predictive(draws, training_xs, grid, options, |_, p| p)
}
