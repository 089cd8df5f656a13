//! Stationary covariance functions, Gram matrices with jittered Cholesky
//! factorization, and the Gaussian log-density of a GP evaluated on a grid.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Squared exponential, `exp(-d²/(2λ²))`.
    #[serde(rename = "se")]
    SquaredExponential,
    /// Ornstein–Uhlenbeck, `exp(-|d|/λ)`.
    #[serde(rename = "ou")]
    OrnsteinUhlenbeck,
    /// Rational quadratic, `(1 + d²/(2λ²))⁻¹`.
    #[serde(rename = "rq")]
    RationalQuadratic,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::SquaredExponential,
        KernelFamily::OrnsteinUhlenbeck,
        KernelFamily::RationalQuadratic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::OrnsteinUhlenbeck => "ou",
            KernelFamily::RationalQuadratic => "rq",
        }
    }

    /// Normalized kernel `K̃_λ` at distance `d`; equals 1 at `d = 0`.
    pub fn correlation(&self, d: f64, lambda: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-d * d / (2.0 * lambda * lambda)).exp(),
            KernelFamily::OrnsteinUhlenbeck => (-d.abs() / lambda).exp(),
            KernelFamily::RationalQuadratic => 1.0 / (1.0 + d * d / (2.0 * lambda * lambda)),
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" => Ok(KernelFamily::SquaredExponential),
            "ou" => Ok(KernelFamily::OrnsteinUhlenbeck),
            "rq" => Ok(KernelFamily::RationalQuadratic),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel family `{other}` (expected se|ou|rq)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kernel family with its length-scale `λ` and amplitude `σ_Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lambda: f64,
    pub sigma_z: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lambda: f64, sigma_z: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(sigma_z > 0.0 && sigma_z.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_z must be positive, got {sigma_z}"
            )));
        }
        Ok(Self {
            family,
            lambda,
            sigma_z,
        })
    }

    /// `σ_Z² K̃_λ(x1, x2)`.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.sigma_z * self.sigma_z * self.family.correlation(x1 - x2, self.lambda)
    }

    /// Same family and length-scale with unit amplitude.
    pub fn normalized(&self) -> Self {
        Self {
            sigma_z: 1.0,
            ..*self
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x1: f64, x2: f64) -> f64 {
    spec.eval(x1, x2)
}

/// `K(a_i, b_l)` for two covariate lists.
pub fn cross_covariance(spec: &KernelSpec, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, l| spec.eval(a[i], b[l]))
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Symmetric positive definite covariance with its lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl GramMatrix {
    /// Factorizes `values`, adding diagonal jitter from `1e-10` up to `1e-4`
    /// times the mean diagonal when a plain factorization fails. `xs` is only
    /// used to name the offending covariates on failure.
    pub fn from_values(values: DMatrix<f64>, xs: &[f64]) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.ncols(),
            });
        }
        let mean_diag = values.diagonal().mean();
        let mut jitter = 0.0;
        loop {
            let mut m = values.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(c) = Cholesky::new(m) {
                let chol = c.unpack();
                let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                return Ok(Self {
                    values,
                    chol,
                    log_det,
                    jitter,
                });
            }
            jitter = if jitter == 0.0 {
                JITTER_START * mean_diag
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * mean_diag * (1.0 + 1e-9) {
                return Err(singular_error(xs));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Lower-triangular `L` with `L Lᵀ = values + jitter·I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L⁻¹ z`.
    pub fn whiten(&self, z: &[f64]) -> Vec<f64> {
        forward_substitute(&self.chol, z)
    }

    /// `L w`.
    pub fn color(&self, w: &[f64]) -> Vec<f64> {
        lower_mul(&self.chol, w)
    }

    /// `zᵀ K⁻¹ z`.
    pub fn quad_form(&self, z: &[f64]) -> f64 {
        self.whiten(z).iter().map(|w| w * w).sum()
    }

    /// `K⁻¹ B` via two triangular solves.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .chol
            .solve_lower_triangular(b)
            .expect("factor has positive diagonal");
        self.chol
            .transpose()
            .solve_upper_triangular(&y)
            .expect("factor has positive diagonal")
    }
}

fn singular_error(xs: &[f64]) -> Error {
    let mut best = (0, xs.len().min(1), f64::INFINITY);
    for i in 0..xs.len() {
        for l in i + 1..xs.len() {
            let d = (xs[i] - xs[l]).abs();
            if d < best.2 {
                best = (i, l, d);
            }
        }
    }
    Error::SingularMatrix {
        first: best.0,
        second: best.1,
        first_value: xs.get(best.0).copied().unwrap_or(f64::NAN),
        second_value: xs.get(best.1).copied().unwrap_or(f64::NAN),
    }
}

/// Solves `L w = z` for lower-triangular `L`.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[(i, k)] * w[k];
        }
        w[i] = s / l[(i, i)];
    }
    w
}

/// `L w` for lower-triangular `L`.
pub(crate) fn lower_mul(l: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let n = w.len();
    (0..n)
        .map(|i| (0..=i).map(|k| l[(i, k)] * w[k]).sum())
        .collect()
}

/// Gram matrix of `spec` on `xs`.
pub fn gram(spec: &KernelSpec, xs: &[f64]) -> Result<GramMatrix> {
    GramMatrix::from_values(cross_covariance(spec, xs, xs), xs)
}

/// Multivariate normal log-density `log N(z; 0, K)`.
pub fn gp_log_density(z: &[f64], gm: &GramMatrix) -> Result<f64> {
    if z.len() != gm.dim() {
        return Err(Error::DimensionMismatch {
            expected: gm.dim(),
            got: z.len(),
        });
    }
    let n = z.len() as f64;
    Ok(-0.5 * gm.quad_form(z) - 0.5 * gm.log_det() - 0.5 * n * (2.0 * PI).ln())
}

/// Dense-vector convenience for `nalgebra` users.
pub fn gp_log_density_vec(z: &DVector<f64>, gm: &GramMatrix) -> Result<f64> {
    gp_log_density(z.as_slice(), gm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(family: KernelFamily, lambda: f64, sigma: f64) -> KernelSpec {
        KernelSpec::new(family, lambda, sigma).unwrap()
    }

    #[test]
    fn diagonal_is_variance() {
        for f in KernelFamily::ALL {
            assert_eq!(spec(f, 0.7, 1.3).eval(2.0, 2.0), 1.3 * 1.3);
        }
    }

    #[test]
    fn known_values() {
        let ou = spec(KernelFamily::OrnsteinUhlenbeck, 2.0, 1.0);
        assert_relative_eq!(ou.eval(0.0, 2.0), 0.367_879_441_171_442_3, max_relative = 1e-15);
        let se = spec(KernelFamily::SquaredExponential, 1.0, 1.0);
        assert_eq!(se.eval(0.0, 100.0), 0.0);
        let rq = spec(KernelFamily::RationalQuadratic, 1.0, 1.0);
        assert_relative_eq!(rq.eval(0.0, 2.0), 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("SE".parse::<KernelFamily>().unwrap(), KernelFamily::SquaredExponential);
        assert!("matern".parse::<KernelFamily>().is_err());
        assert!(KernelSpec::new(KernelFamily::OrnsteinUhlenbeck, 0.0, 1.0).is_err());
    }

    #[test]
    fn single_point_gram() {
        let gm = gram(&spec(KernelFamily::SquaredExponential, 1.0, 2.0), &[3.0]).unwrap();
        assert_eq!(gm.values()[(0, 0)], 4.0);
        assert_relative_eq!(gm.log_det(), 2.0 * 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn separated_points_are_independent() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64 * 100.0).collect();
        let gm = gram(&spec(KernelFamily::SquaredExponential, 1.0, 1.5), &xs).unwrap();
        assert_relative_eq!(gm.log_det(), 6.0 * (1.5f64 * 1.5).ln(), epsilon = 1e-12);
    }

    #[test]
    fn duplicate_covariates_need_jitter_or_fail() {
        let s = spec(KernelFamily::SquaredExponential, 1.0, 1.0);
        let gm = gram(&s, &[0.0, 0.0, 1.0]).unwrap();
        assert!(gm.jitter() > 0.0);
        // An exact duplicate still factorizes once jitter is added; a negative
        // eigenvalue does not.
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = GramMatrix::from_values(bad, &[5.0, 5.5]).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { first: 0, second: 1, .. }));
    }

    #[test]
    fn reconstruction_random_grid() {
        let xs = [0.3, 1.7, -2.0, 4.4, 0.9, 2.2, -0.7, 3.1, 5.0, -3.3];
        for f in KernelFamily::ALL {
            let gm = gram(&spec(f, 1.3, 0.8), &xs).unwrap();
            let rec = gm.chol() * gm.chol().transpose();
            let rel = (&rec - gm.values()).abs().max() / gm.values().abs().max();
            assert!(rel < 1e-8, "{f}: {rel}");
        }
    }

    #[test]
    fn log_density_zero_and_scalar() {
        let gm = gram(&spec(KernelFamily::SquaredExponential, 1.0, 1.0), &[0.0]).unwrap();
        assert_relative_eq!(
            gp_log_density(&[0.0], &gm).unwrap(),
            -0.918_938_533_204_672_7,
            max_relative = 1e-14
        );
        let xs = [0.0, 0.5, 1.7];
        let gm = gram(&spec(KernelFamily::RationalQuadratic, 0.9, 1.2), &xs).unwrap();
        assert_relative_eq!(
            gp_log_density(&[0.0; 3], &gm).unwrap(),
            -0.5 * gm.log_det() - 1.5 * (2.0 * PI).ln(),
            max_relative = 1e-14
        );
        assert!(matches!(
            gp_log_density(&[0.0; 2], &gm),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_density_matches_dense_inverse() {
        let xs = [0.0, 0.4, 1.1, 2.5, 2.9];
        let z = [0.3, -1.2, 0.8, 2.0, -0.4];
        for f in KernelFamily::ALL {
            let s = spec(f, 1.1, 0.9);
            let gm = gram(&s, &xs).unwrap();
            let k = cross_covariance(&s, &xs, &xs);
            let inv = k.clone().try_inverse().unwrap();
            let zv = DVector::from_row_slice(&z);
            let quad = (zv.transpose() * &inv * &zv)[(0, 0)];
            let oracle = -0.5 * quad - 0.5 * k.determinant().ln() - 2.5 * (2.0 * PI).ln();
            assert_relative_eq!(gp_log_density(&z, &gm).unwrap(), oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn density_integrates_to_one_in_two_dims() {
        // Importance sampling with a wide Gaussian proposal.
        use rand::Rng;
        use rand_distr::StandardNormal;
        let s = spec(KernelFamily::SquaredExponential, 1.0, 1.0);
        let gm = gram(&s, &[0.0, 0.8]).unwrap();
        let mut rng = crate::rng::stream(7, 0);
        let scale = 3.0;
        let n = 200_000;
        let mut acc = crate::stats::RunningMoments::new();
        for _ in 0..n {
            let a: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
            let b: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
            let log_q = -0.5 * (a * a + b * b) / (scale * scale)
                - (2.0 * PI * scale * scale).ln();
            acc.push((gp_log_density(&[a, b], &gm).unwrap() - log_q).exp());
        }
        assert!((acc.mean() - 1.0).abs() <= 3.0 * acc.std_error(), "{}", acc.mean());
    }

    proptest! {
        #[test]
        fn stationary_and_monotone(x1 in -50.0..50.0f64, x2 in -50.0..50.0f64,
                                   shift in -20.0..20.0f64, lambda in 0.05..10.0f64) {
            for f in KernelFamily::ALL {
                let s = spec(f, lambda, 1.0);
                let a = s.eval(x1, x2);
                prop_assert!((a - s.eval(x1 + shift, x2 + shift)).abs() < 1e-12);
                prop_assert!((a - s.eval(x2, x1)).abs() < 1e-15);
                let d = (x1 - x2).abs();
                prop_assert!(f.correlation(d * 1.5 + 1e-3, lambda) <= f.correlation(d, lambda));
            }
        }

        #[test]
        fn gram_is_psd(xs in proptest::collection::vec(-10.0..10.0f64, 2..50),
                       lambda in 0.1..5.0f64) {
            for f in KernelFamily::ALL {
                let k = cross_covariance(&spec(f, lambda, 1.0), &xs, &xs);
                let trace = k.trace();
                let eig = k.symmetric_eigenvalues();
                prop_assert!(eig.min() >= -1e-8 * trace);
            }
        }
    }
}
