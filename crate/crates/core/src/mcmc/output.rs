use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{AcceptanceRates, Draw, LatentState, ProposalScales, SamplerConfig};
use crate::error::{Error, Result};

/// One NDJSON line. `z` is flattened species by species:
/// `z[j * n_sites + i] = Z_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iter: usize,
    pub n_sites: usize,
    pub z: Vec<f64>,
    pub sigma_z: f64,
    pub lambda: f64,
    pub m: f64,
    pub log_posterior: f64,
}

impl From<&Draw> for DrawRecord {
    fn from(d: &Draw) -> Self {
        Self {
            iter: d.iteration,
            n_sites: d.state.n_sites(),
            z: d.state.z.as_slice().to_vec(),
            sigma_z: d.state.sigma_z,
            lambda: d.state.lambda,
            m: d.state.m,
            log_posterior: d.log_posterior,
        }
    }
}

impl TryFrom<DrawRecord> for Draw {
    type Error = Error;

    fn try_from(r: DrawRecord) -> Result<Self> {
        if r.n_sites == 0 || !r.z.len().is_multiple_of(r.n_sites) {
            return Err(Error::Validation(format!(
                "draw {}: {} latent values do not fill {} sites",
                r.iter,
                r.z.len(),
                r.n_sites
            )));
        }
        let n_species = r.z.len() / r.n_sites;
        let state = LatentState {
            z: DMatrix::from_vec(r.n_sites, n_species, r.z),
            sigma_z: r.sigma_z,
            lambda: r.lambda,
            m: r.m,
        };
        state.validate()?;
        Ok(Draw {
            iteration: r.iter,
            state,
            log_posterior: r.log_posterior,
        })
    }
}

pub fn write_draw<W: Write>(mut writer: W, draw: &Draw) -> Result<()> {
    serde_json::to_writer(&mut writer, &DrawRecord::from(draw))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Reads an NDJSON draw file; blank lines are skipped.
pub fn read_draws<R: BufRead>(reader: R) -> Result<Vec<Draw>> {
    let mut draws = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DrawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx as u64 + 1,
            message: e.to_string(),
        })?;
        draws.push(Draw::try_from(record)?);
    }
    Ok(draws)
}

/// Everything needed to reproduce and audit a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SamplerConfig,
    pub n_sites: usize,
    pub n_species: usize,
    pub site_ids: Vec<String>,
    pub species_ids: Vec<String>,
    /// Covariates the sampler saw, after jittering.
    pub covariates: Vec<f64>,
    pub n_draws: usize,
    pub acceptance: AcceptanceRates,
    pub scales: ProposalScales,
    pub wall_time_secs: f64,
    pub data_file: String,
    pub data_sha256: String,
    pub draws_file: String,
    pub draws_sha256: String,
}
