use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::ln_norm_cdf;

/// How the truncated-normal proposal enters the acceptance ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HastingsMode {
    #[default]
    Exact,
    /// Drops the `Φ(T/s) / Φ(T'/s)` normalizer ratio. The resulting chain
    /// targets the wrong distribution; kept as a negative control.
    OmitTruncationCorrection,
}

#[derive(Clone, Copy, Debug)]
pub enum Proposal<'a> {
    /// `T' ~ N(T, s² I)`.
    Gaussian,
    /// Scalar `T' ~ N(T, s²)` restricted to `T' > 0`.
    TruncatedGaussian(HastingsMode),
    /// `T' ~ N(T, s² L Lᵀ)` with `L` lower triangular.
    Correlated(&'a DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhOutcome {
    pub value: Vec<f64>,
    pub log_target: f64,
    pub accepted: bool,
    /// `min(1, ρ)`, used for adaptation.
    pub accept_prob: f64,
    /// The proposal's target was NaN and it was rejected.
    pub nan: bool,
}

/// Draws from `N(mean, s²)` conditioned on being positive, by rejection.
/// For `mean > 0` at least half of the raw draws are kept.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, s: f64, rng: &mut R) -> f64 {
    loop {
        let e: f64 = rng.sample(StandardNormal);
        let x = mean + s * e;
        if x > 0.0 {
            return x;
        }
    }
}

/// One Metropolis–Hastings transition from `current`, whose target value
/// `current_log_target` the caller already knows.
pub fn mh_step<R, F>(
    mut log_target: F,
    proposal: Proposal<'_>,
    current: &[f64],
    current_log_target: f64,
    scale: f64,
    rng: &mut R,
) -> Result<MhOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("proposal scale must be positive, got {scale}")));
    }
    let mut log_q_ratio = 0.0;
    let proposed: Vec<f64> = match proposal {
        Proposal::Gaussian => current
            .iter()
            .map(|&c| c + scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        Proposal::TruncatedGaussian(mode) => {
            if current.len() != 1 || current[0] <= 0.0 {
                return Err(Error::InvalidArgument(
                    "truncated proposal needs one positive coordinate".into(),
                ));
            }
            let t = current[0];
            let t_new = sample_truncated_normal(t, scale, rng);
            if mode == HastingsMode::Exact {
                log_q_ratio = ln_norm_cdf(t / scale) - ln_norm_cdf(t_new / scale);
            }
            vec![t_new]
        }
        Proposal::Correlated(l) => {
            if l.nrows() != current.len() {
                return Err(Error::DimensionMismatch {
                    expected: current.len(),
                    got: l.nrows(),
                });
            }
            let eps: Vec<f64> = (0..current.len()).map(|_| rng.sample(StandardNormal)).collect();
            let step = crate::kernels::lower_mul(l, &eps);
            current.iter().zip(step).map(|(c, s)| c + scale * s).collect()
        }
    };
    let new_target = log_target(&proposed);
    if new_target.is_nan() {
        log::debug!("MH proposal rejected: target is NaN");
        return Ok(MhOutcome {
            value: current.to_vec(),
            log_target: current_log_target,
            accepted: false,
            accept_prob: 0.0,
            nan: true,
        });
    }
    let log_rho = new_target - current_log_target + log_q_ratio;
    let accept_prob = if log_rho >= 0.0 { 1.0 } else { log_rho.exp() };
    let accepted = log_rho >= 0.0 || rng.random::<f64>() < accept_prob;
    Ok(if accepted {
        MhOutcome {
            value: proposed,
            log_target: new_target,
            accepted,
            accept_prob,
            nan: false,
        }
    } else {
        MhOutcome {
            value: current.to_vec(),
            log_target: current_log_target,
            accepted,
            accept_prob,
            nan: false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::special::ln_gamma_pdf;
    use crate::stats::RunningMoments;

    #[test]
    fn flat_target_always_accepts() {
        let mut rng = rng::stream(1, 0);
        for _ in 0..1000 {
            let out = mh_step(|_| 0.0, Proposal::Gaussian, &[0.3, -1.0], 0.0, 1.0, &mut rng).unwrap();
            assert!(out.accepted);
            assert_eq!(out.accept_prob, 1.0);
        }
    }

    #[test]
    fn staying_put_is_accepted() {
        let mut rng = rng::stream(2, 0);
        let target = |x: &[f64]| -x[0] * x[0];
        let out = mh_step(target, Proposal::Gaussian, &[1.0], -1.0, 1e-300, &mut rng).unwrap();
        assert!(out.accepted);
    }

    #[test]
    fn nan_target_rejects() {
        let mut rng = rng::stream(3, 0);
        let out = mh_step(|_| f64::NAN, Proposal::Gaussian, &[1.0], 0.0, 1.0, &mut rng).unwrap();
        assert!(!out.accepted && out.nan);
        assert_eq!(out.value, [1.0]);
        assert!(mh_step(|_| 0.0, Proposal::Gaussian, &[1.0], 0.0, 0.0, &mut rng).is_err());
    }

    fn gamma_chain(mode: HastingsMode, seed: u64) -> RunningMoments {
        let mut rng = rng::stream(seed, 0);
        let target = |x: &[f64]| ln_gamma_pdf(x[0], 1.0, 1.0);
        let mut t = vec![1.0];
        let mut lt = target(&t);
        let mut acc = RunningMoments::new();
        let mut batch = RunningMoments::new();
        for i in 0..100_000 {
            let out = mh_step(target, Proposal::TruncatedGaussian(mode), &t, lt, 2.0, &mut rng).unwrap();
            t = out.value;
            lt = out.log_target;
            batch.push(t[0]);
            // Batch means turn the correlated chain into near-independent samples.
            if (i + 1) % 500 == 0 {
                acc.push(batch.mean());
                batch = RunningMoments::new();
            }
        }
        acc
    }

    #[test]
    fn truncated_proposal_recovers_gamma_mean() {
        let acc = gamma_chain(HastingsMode::Exact, 4);
        assert!((acc.mean() - 1.0).abs() < 3.0 * acc.std_error(), "{} ± {}", acc.mean(), acc.std_error());
    }

    #[test]
    fn dropping_the_correction_biases_the_chain() {
        let acc = gamma_chain(HastingsMode::OmitTruncationCorrection, 4);
        assert!(acc.mean() - 1.0 > 6.0 * acc.std_error(), "{} ± {}", acc.mean(), acc.std_error());
    }

    #[test]
    fn correlated_proposal_targets_gaussian() {
        let mut rng = rng::stream(5, 0);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.8, 0.6]);
        let target = |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]);
        let mut x = vec![0.0, 0.0];
        let mut lt = 0.0;
        let mut m0 = RunningMoments::new();
        let mut batch = RunningMoments::new();
        for i in 0..200_000 {
            let out = mh_step(target, Proposal::Correlated(&l), &x, lt, 1.5, &mut rng).unwrap();
            x = out.value;
            lt = out.log_target;
            batch.push(x[0] * x[0]);
            if (i + 1) % 1000 == 0 {
                m0.push(batch.mean());
                batch = RunningMoments::new();
            }
        }
        assert!((m0.mean() - 1.0).abs() < 4.0 * m0.std_error());
    }
}
