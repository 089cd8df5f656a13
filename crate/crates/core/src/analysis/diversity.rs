use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::rng;
use crate::stickbreaking::{sample_break_pair, GemParams, MonteCarlo, WeightProfile};

/// `1 - Σ p_j²`. Residual stick mass counts as infinitely fragmented and adds
/// nothing to the sum of squares.
pub fn simpson(p: &WeightProfile) -> f64 {
    1.0 - p.weights.iter().map(|w| w * w).sum::<f64>()
}

/// `-Σ p_j ln p_j`.
pub fn shannon(p: &WeightProfile) -> f64 {
    good_index(p, 1.0, 1.0)
}

/// `Σ p_j^α (-ln p_j)^β` over species with positive weight.
///
/// With this sign convention `(1, 1)` is Shannon and `(2, 0)` is `Σ p_j²`.
pub fn good_index(p: &WeightProfile, alpha: f64, beta: f64) -> f64 {
    p.weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|&w| w.powf(alpha) * (-w.ln()).max(0.0).powf(beta))
        .sum()
}

/// Diversity index selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum DiversityIndex {
    #[default]
    Simpson,
    Shannon,
    Good { alpha: f64, beta: f64 },
}

impl DiversityIndex {
    pub fn eval(&self, p: &WeightProfile) -> f64 {
        match *self {
            DiversityIndex::Simpson => simpson(p),
            DiversityIndex::Shannon => shannon(p),
            DiversityIndex::Good { alpha, beta } => good_index(p, alpha, beta),
        }
    }
}


impl fmt::Display for DiversityIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiversityIndex::Simpson => write!(f, "simpson"),
            DiversityIndex::Shannon => write!(f, "shannon"),
            DiversityIndex::Good { alpha, beta } => write!(f, "good:{alpha},{beta}"),
        }
    }
}

/// Parses `simpson`, `shannon` or `good:ALPHA,BETA`.
impl FromStr for DiversityIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "simpson" => return Ok(DiversityIndex::Simpson),
            "shannon" => return Ok(DiversityIndex::Shannon),
            _ => {}
        }
        let bad = || Error::InvalidArgument(format!("unknown diversity index `{s}`"));
        let args = s.strip_prefix("good:").ok_or_else(bad)?;
        let (a, b) = args.split_once(',').ok_or_else(bad)?;
        let alpha: f64 = a.trim().parse().map_err(|_| bad())?;
        let beta: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::InvalidArgument("Good index needs alpha, beta >= 0".into()));
        }
        Ok(DiversityIndex::Good { alpha, beta })
    }
}

/// `Var(H) = 2M / ((M+1)(M+1)(M+2)(M+3))` under GEM(M).
pub fn simpson_prior_variance(params: &GemParams) -> f64 {
    let m = params.m;
    2.0 * m / ((m + 1.0) * (m + 1.0) * (m + 2.0) * (m + 3.0))
}

/// Prior mean `M/(1+M)` and variance of the Simpson index.
pub fn simpson_prior_moments(params: &GemParams) -> (f64, f64) {
    (params.m / (1.0 + params.m), simpson_prior_variance(params))
}

/// Maximizer over `M` of the prior variance of the Simpson index, by golden
/// section search on `ln M`.
pub fn simpson_variance_argmax() -> f64 {
    let f = |t: f64| simpson_prior_variance(&GemParams { m: t.exp() });
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-10.0f64, 10.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    while b - a > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
    }
    (0.5 * (a + b)).exp()
}

/// Monte Carlo estimate of the prior covariance of the Simpson index at two
/// covariates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpsonCov {
    pub cov: f64,
    /// Delta-method standard error.
    pub std_error: f64,
    pub nu22: f64,
    pub omega20: f64,
    pub omega22: f64,
    pub nu20: f64,
    pub gamma22: f64,
    pub nu10: f64,
}

const K: usize = 6;

#[derive(Clone)]
struct Moments {
    n: f64,
    sum: [f64; K],
    cross: [[f64; K]; K],
}

impl Moments {
    fn new() -> Self {
        Self {
            n: 0.0,
            sum: [0.0; K],
            cross: [[0.0; K]; K],
        }
    }

    fn push(&mut self, v: [f64; K]) {
        self.n += 1.0;
        for a in 0..K {
            self.sum[a] += v[a];
            for b in a..K {
                self.cross[a][b] += v[a] * v[b];
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        for a in 0..K {
            self.sum[a] += o.sum[a];
            for b in a..K {
                self.cross[a][b] += o.cross[a][b];
            }
        }
    }
}

/// Covariance of the Simpson index at `x1` and `x2`, assembled from simulated
/// mixed break moments `ν, ω, γ`:
/// `[ν22(1-ω20) + 2ν20γ22] / [(1-ω20)(1-ω22)] - ν10²`.
pub fn simpson_prior_cov(
    spec: &KernelSpec,
    params: &GemParams,
    x1: f64,
    x2: f64,
    mc: &MonteCarlo,
) -> Result<SimpsonCov> {
    if mc.samples < 10_000 {
        return Err(Error::InvalidArgument("Simpson covariance needs at least 10^4 samples".into()));
    }
    let rho = spec.family.correlation(x1 - x2, spec.lambda);
    let parts = rng::par_chunks(mc.seed, mc.chunks, mc.samples, |rng, len| {
        let mut acc = Moments::new();
        for _ in 0..len {
            let (v1, v2) = sample_break_pair(rho, params, rng);
            let (a1, a2) = ((1.0 - v1).powi(2), (1.0 - v2).powi(2));
            let (s1, s2) = (v1 * v1, v2 * v2);
            acc.push([s1 * s2, a1, a1 * a2, s1, s1 * a2, v1]);
        }
        acc
    });
    let mut acc = Moments::new();
    parts.iter().for_each(|p| acc.merge(p));
    let n = acc.n;
    let e: Vec<f64> = acc.sum.iter().map(|s| s / n).collect();
    let (nu22, omega20, omega22, nu20, gamma22, nu10) = (e[0], e[1], e[2], e[3], e[4], e[5]);
    let (a, b) = (1.0 - omega20, 1.0 - omega22);
    let cov = (nu22 * a + 2.0 * nu20 * gamma22) / (a * b) - nu10 * nu10;
    let grad = [
        1.0 / b,
        2.0 * nu20 * gamma22 / (a * a * b),
        nu22 / (b * b) + 2.0 * nu20 * gamma22 / (a * b * b),
        2.0 * gamma22 / (a * b),
        2.0 * nu20 / (a * b),
        -2.0 * nu10,
    ];
    let mut var = 0.0;
    for i in 0..K {
        for j in 0..K {
            let (lo, hi) = (i.min(j), i.max(j));
            let c = (acc.cross[lo][hi] / n - e[i] * e[j]) * n / (n - 1.0);
            var += grad[i] * grad[j] * c;
        }
    }
    Ok(SimpsonCov {
        cov,
        std_error: (var.max(0.0) / n).sqrt(),
        nu22,
        omega20,
        omega22,
        nu20,
        gamma22,
        nu10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use crate::stats::RunningMoments;
    use crate::stickbreaking::{sample_depgem, sample_gem};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn profile(w: &[f64]) -> WeightProfile {
        WeightProfile::from_weights(w.to_vec()).unwrap()
    }

    #[test]
    fn index_values() {
        assert_eq!(simpson(&profile(&[1.0])), 0.0);
        assert_eq!(simpson(&profile(&[0.5, 0.5])), 0.5);
        assert_relative_eq!(simpson(&profile(&[0.1; 10])), 0.9, epsilon = 1e-12);
        assert_eq!(shannon(&profile(&[1.0])), 0.0);
        assert_relative_eq!(shannon(&profile(&[0.5, 0.5])), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(shannon(&profile(&[0.5, 0.0, 0.5])), shannon(&profile(&[0.5, 0.5])));
    }

    #[test]
    fn index_parsing() {
        assert_eq!("Simpson".parse::<DiversityIndex>().unwrap(), DiversityIndex::Simpson);
        assert_eq!(
            "good:2,0".parse::<DiversityIndex>().unwrap(),
            DiversityIndex::Good { alpha: 2.0, beta: 0.0 }
        );
        assert!("good:-1,0".parse::<DiversityIndex>().is_err());
        assert!("gini".parse::<DiversityIndex>().is_err());
        let g = DiversityIndex::Good { alpha: 1.5, beta: 2.0 };
        assert_eq!(g.to_string().parse::<DiversityIndex>().unwrap(), g);
    }

    proptest! {
        #[test]
        fn good_index_specializations(raw in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-3;
            let p = profile(&raw.iter().map(|w| w / total).collect::<Vec<_>>());
            prop_assert!((good_index(&p, 1.0, 1.0) - shannon(&p)).abs() < 1e-12);
            prop_assert!((simpson(&p) + good_index(&p, 2.0, 0.0) - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&simpson(&p)));
            prop_assert!(shannon(&p) >= 0.0);
        }

        #[test]
        fn prior_mean_increasing(m in 0.01f64..50.0, dm in 0.01f64..5.0) {
            let a = simpson_prior_moments(&GemParams { m }).0;
            let b = simpson_prior_moments(&GemParams { m: m + dm }).0;
            prop_assert!(a < b);
        }
    }

    #[test]
    fn prior_moments_limits_and_argmax() {
        let (mean, var) = simpson_prior_moments(&GemParams { m: 1.0 });
        assert_eq!(mean, 0.5);
        assert_relative_eq!(var, 1.0 / 24.0, epsilon = 1e-15);
        let (mean, var) = simpson_prior_moments(&GemParams { m: 1e-9 });
        assert!(mean < 1e-8 && var < 1e-8);
        let arg = simpson_variance_argmax();
        assert!((arg - 0.49).abs() <= 0.01, "argmax {arg}");
        let v = |m: f64| simpson_prior_variance(&GemParams { m });
        assert!(v(arg) > v(arg * 0.9) && v(arg) > v(arg * 1.1));
        assert!(v(0.05) < v(0.2) && v(3.0) < v(1.0));
    }

    #[test]
    fn prior_moments_match_simulation() {
        let params = GemParams { m: 1.0 };
        let mut rng = rng::stream(11, 0);
        let mut acc = RunningMoments::new();
        let mut sq = RunningMoments::new();
        for _ in 0..200_000 {
            let h = simpson(&sample_gem(&params, 60, &mut rng));
            acc.push(h);
            sq.push((h - 0.5).powi(2));
        }
        let (mean, var) = simpson_prior_moments(&params);
        assert!((acc.mean() - mean).abs() < 4.0 * acc.std_error());
        assert!((sq.mean() - var).abs() < 4.0 * sq.std_error());
    }

    fn se_spec() -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap()
    }

    #[test]
    fn covariance_limits() {
        let params = GemParams { m: 1.0 };
        let mc = MonteCarlo::new(200_000, 4).with_chunks(4);
        let same = simpson_prior_cov(&se_spec(), &params, 0.3, 0.3, &mc).unwrap();
        let var = simpson_prior_variance(&params);
        assert!((same.cov - var).abs() < 4.0 * same.std_error, "{same:?} vs {var}");
        let far = simpson_prior_cov(&se_spec(), &params, 0.0, 100.0, &mc).unwrap();
        assert!(far.cov.abs() < 4.0 * far.std_error, "{far:?}");
        assert!(simpson_prior_cov(&se_spec(), &params, 0.0, 1.0, &MonteCarlo::new(100, 1)).is_err());
    }

    #[test]
    fn covariance_matches_paired_simulation() {
        let params = GemParams { m: 1.0 };
        let spec = se_spec();
        let est = simpson_prior_cov(&spec, &params, 0.0, 1.0, &MonteCarlo::new(400_000, 8).with_chunks(4)).unwrap();
        let mut rng = rng::stream(21, 0);
        let n = 200_000;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let p = sample_depgem(&spec, &params, &[0.0, 1.0], 60, &mut rng).unwrap();
            pairs.push((simpson(&p[0]), simpson(&p[1])));
        }
        let m1 = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let m2 = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let mut prod = RunningMoments::new();
        for (a, b) in &pairs {
            prod.push((a - m1) * (b - m2));
        }
        let z = (prod.mean() - est.cov) / (prod.std_error().powi(2) + est.std_error.powi(2)).sqrt();
        assert!(z.abs() <= 5.0, "direct {} vs assembled {} (z = {z})", prod.mean(), est.cov);
    }
}
