use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{AcceptanceRates, ChainSamples, Param};
use crate::error::{Error, Result};
use crate::stats;

/// Sample autocorrelations `ρ_0 = 1, …, ρ_max_lag`.
pub fn autocorrelation(trace: &[f64], max_lag: usize) -> Vec<f64> {
    let n = trace.len();
    let mean = stats::mean(trace);
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            if c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            let ck: f64 = centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64;
            ck / c0
        })
        .collect()
}

/// Effective sample size from Geyer's initial positive sequence: pairs
/// `ρ_{2k} + ρ_{2k+1}` are summed while positive. A constant trace has ESS 1.
pub fn effective_sample_size(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 2 {
        return n as f64;
    }
    if stats::variance(trace) == 0.0 {
        return 1.0;
    }
    let acf = autocorrelation(trace, n - 1);
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < acf.len() {
        let pair = acf[2 * k] + acf[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub acf: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub n_draws: usize,
    pub params: Vec<ParamDiagnostics>,
    pub acceptance: AcceptanceRates,
}

pub const MAX_ACF_LAG: usize = 100;

pub fn diagnostics(chain: &ChainSamples) -> Result<ChainDiagnostics> {
    if chain.len() < 10 {
        return Err(Error::Validation(format!(
            "diagnostics need at least 10 draws, chain has {}",
            chain.len()
        )));
    }
    let params = Param::ALL
        .iter()
        .map(|p| {
            let trace = chain.trace(*p);
            ParamDiagnostics {
                name: p.name().to_string(),
                mean: stats::mean(&trace),
                sd: stats::variance(&trace).sqrt(),
                ess: effective_sample_size(&trace),
                acf: autocorrelation(&trace, MAX_ACF_LAG),
            }
        })
        .collect();
    Ok(ChainDiagnostics {
        n_draws: chain.len(),
        params,
        acceptance: chain.acceptance.clone(),
    })
}

/// Scalar traces as CSV: `iteration,sigma_z,lambda,m,log_posterior`.
pub fn write_trace_csv<W: Write>(chain: &ChainSamples, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "sigma_z", "lambda", "m", "log_posterior"])
        .map_err(csv_err)?;
    for d in &chain.draws {
        w.write_record(&[
            d.iteration.to_string(),
            d.state.sigma_z.to_string(),
            d.state.lambda.to_string(),
            d.state.m.to_string(),
            d.log_posterior.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
