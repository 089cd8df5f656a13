use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::Draw;
use crate::predictive::{map_predictive, PredictiveGrid, PredictiveOptions};
use crate::stats::quantile;
use crate::stickbreaking::WeightProfile;

use super::curve::csv_err;
use super::DiversityCurve;

/// Number of points in the default EC evaluation grid.
pub const DEFAULT_EC_GRID_POINTS: usize = 641;

/// Weighted (Ružička) Jaccard dissimilarity `1 - Σ min(p, q) / Σ max(p, q)`.
pub fn jaccard(p: &WeightProfile, q: &WeightProfile) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    for (a, b) in p.weights.iter().zip(&q.weights) {
        lo += a.min(*b);
        hi += a.max(*b);
    }
    if hi == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - lo / hi).clamp(0.0, 1.0))
}

/// Mean and 95% band of a scalar posterior quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl Interval {
    fn from_draws(xs: &[f64]) -> Self {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        Self {
            mean,
            lo95: quantile(xs, 0.025).min(mean),
            hi95: quantile(xs, 0.975).max(mean),
        }
    }
}

/// Posterior dissimilarity to the baseline community along a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityCurve {
    pub curve: DiversityCurve,
    pub jac0: Interval,
    pub jac0_draws: Vec<f64>,
}

/// `Jac(X)` at every grid profile and `Jac_0` for one draw: the mean
/// dissimilarity to each baseline site, and the mean over unordered pairs of
/// baseline sites.
pub fn dissimilarity_values(grid: &[WeightProfile], baseline: &[WeightProfile]) -> Result<(Vec<f64>, f64)> {
    if baseline.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 baseline sites to define the baseline dissimilarity, got {}",
            baseline.len()
        )));
    }
    let nb = baseline.len() as f64;
    let jac = grid
        .iter()
        .map(|p| Ok(baseline.iter().map(|b| jaccard(p, b)).sum::<Result<f64>>()? / nb))
        .collect::<Result<Vec<f64>>>()?;
    let mut total = 0.0;
    for a in 0..baseline.len() {
        for b in a + 1..baseline.len() {
            total += jaccard(&baseline[a], &baseline[b])?;
        }
    }
    Ok((jac, total / (nb * (nb - 1.0) / 2.0)))
}

/// Posterior curve of `Jac(X)` over the grid together with `Jac_0`. The
/// baseline communities are the predictive weights at `baseline_xs`.
pub fn dissimilarity_curve(
    draws: &[Draw],
    training_xs: &[f64],
    grid: &PredictiveGrid,
    baseline_xs: &[f64],
    options: &PredictiveOptions,
) -> Result<DissimilarityCurve> {
    if baseline_xs.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 baseline sites to define the baseline dissimilarity, got {}",
            baseline_xs.len()
        )));
    }
    let n = grid.len();
    let mut points = grid.points().to_vec();
    points.extend_from_slice(baseline_xs);
    let joint = PredictiveGrid::new(points, training_xs)?;
    let per_draw = map_predictive(draws, training_xs, &joint, options, |_, profiles| {
        dissimilarity_values(&profiles[..n], &profiles[n..])
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let jac0_draws: Vec<f64> = per_draw.iter().map(|d| d.1).collect();
    let values: Vec<Vec<f64>> = per_draw.into_iter().map(|d| d.0).collect();
    Ok(DissimilarityCurve {
        curve: DiversityCurve::from_draws(grid.points().to_vec(), &values)?,
        jac0: Interval::from_draws(&jac0_draws),
        jac0_draws,
    })
}

/// Effective concentration `EC_x` with its credible interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcxEstimate {
    pub x_percent: f64,
    pub threshold: f64,
    pub ec: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// False when the mean curve never reaches the threshold on the grid; `ec`
    /// is then the grid maximum.
    pub reached: bool,
}

/// Smallest covariate where `f` reaches `t`, interpolating linearly between
/// grid points.
fn first_crossing(grid: &[f64], f: &[f64], t: f64) -> Option<f64> {
    if f[0] >= t {
        return Some(grid[0]);
    }
    (1..grid.len()).find(|&k| f[k] >= t).map(|k| {
        let frac = (t - f[k - 1]) / (f[k] - f[k - 1]);
        grid[k - 1] + frac * (grid[k] - grid[k - 1])
    })
}

/// Smallest `X` with `Jac(X) ≥ 1 - (1 - Jac_0)(1 - x/100)` on the posterior
/// mean curve. The interval runs from the first crossing of the upper band to
/// the first crossing of the lower band, or the grid maximum if the lower band
/// never gets there.
pub fn ecx(curve: &DiversityCurve, jac0: f64, x_percent: f64) -> Result<EcxEstimate> {
    if !(0.0..=100.0).contains(&x_percent) {
        return Err(Error::InvalidArgument(format!("x must be in [0, 100], got {x_percent}")));
    }
    if !(0.0..=1.0).contains(&jac0) {
        return Err(Error::InvalidArgument(format!("baseline dissimilarity {jac0} outside [0, 1]")));
    }
    if curve.is_empty() {
        return Err(Error::Validation("empty curve".into()));
    }
    if curve.grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Validation("curve grid must be strictly increasing".into()));
    }
    let t = 1.0 - (1.0 - jac0) * (1.0 - x_percent / 100.0);
    let g_max = *curve.grid.last().expect("non-empty");
    let ec = first_crossing(&curve.grid, &curve.mean, t);
    if ec.is_none() {
        log::warn!("EC_{x_percent}: dissimilarity never reaches {t} on the grid");
    }
    Ok(EcxEstimate {
        x_percent,
        threshold: t,
        ec: ec.unwrap_or(g_max),
        ci_lo: first_crossing(&curve.grid, &curve.hi95, t).unwrap_or(g_max),
        ci_hi: first_crossing(&curve.grid, &curve.lo95, t).unwrap_or(g_max),
        reached: ec.is_some(),
    })
}

pub fn ecx_table(curve: &DiversityCurve, jac0: f64, levels: &[f64]) -> Result<Vec<EcxEstimate>> {
    levels.iter().map(|&x| ecx(curve, jac0, x)).collect()
}

/// `x,ec,ci_lo,ci_hi`.
pub fn write_ecx_csv<W: Write>(table: &[EcxEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "ec", "ci_lo", "ci_hi"]).map_err(csv_err)?;
    for e in table {
        w.write_record([
            e.x_percent.to_string(),
            e.ec.to_string(),
            e.ci_lo.to_string(),
            e.ci_hi.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Evenly spaced points on `[0, max]`.
pub fn default_ec_grid(max: f64) -> Vec<f64> {
    let n = DEFAULT_EC_GRID_POINTS;
    (0..n).map(|k| max * k as f64 / (n - 1) as f64).collect()
}
