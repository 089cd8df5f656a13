use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SpeciesCountTable;
use crate::error::{Error, Result};
use crate::mcmc::{column_log_likelihood, Draw};
use crate::stats::{log_sum_exp, quantile};

use super::curve::csv_err;

/// Leave-one-species-out predictive summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpoReport {
    pub per_species_log_cpo: Vec<f64>,
    pub mean_log_cpo: f64,
    pub median_log_cpo: f64,
    /// `(species, draws)` for species with zero-likelihood draws. Their
    /// log-CPO is `-inf`.
    pub degenerate: Vec<(usize, usize)>,
}

/// `ln L(Y_j | θ)` for the species-`j` factor of the likelihood, the only
/// factor containing that species' own counts.
pub fn species_log_likelihood(draw: &Draw, table: &SpeciesCountTable, species: usize) -> Result<f64> {
    let state = &draw.state;
    if state.n_sites() != table.n_sites() || state.n_species() != table.n_species() {
        return Err(Error::DimensionMismatch {
            expected: table.n_sites() * table.n_species(),
            got: state.n_sites() * state.n_species(),
        });
    }
    let tails = table.tail_counts();
    let n: Vec<f64> = table.counts().iter().map(|r| r[species] as f64).collect();
    let tail: Vec<f64> = tails.iter().map(|r| r[species] as f64).collect();
    let z: Vec<f64> = state.z.column(species).iter().copied().collect();
    Ok(column_log_likelihood(&z, &n, &tail, state.sigma_z, state.m))
}

/// Harmonic-mean estimate `CPO_j = [T⁻¹ Σ_t L(Y_j | θ_t)⁻¹]⁻¹`, in log space.
pub fn cpo(draws: &[Draw], table: &SpeciesCountTable) -> Result<CpoReport> {
    if draws.is_empty() {
        return Err(Error::Validation("chain has no draws".into()));
    }
    if draws.len() < 100 {
        log::warn!("CPO from only {} draws is unreliable", draws.len());
    }
    if let Some(d) = draws
        .iter()
        .find(|d| d.state.n_sites() != table.n_sites() || d.state.n_species() != table.n_species())
    {
        return Err(Error::DimensionMismatch {
            expected: table.n_species(),
            got: d.state.n_species(),
        });
    }
    let tails = table.tail_counts();
    let n_species = table.n_species();
    let ln_t = (draws.len() as f64).ln();
    let per_species: Vec<(f64, usize)> = (0..n_species)
        .into_par_iter()
        .map(|j| {
            let n: Vec<f64> = table.counts().iter().map(|r| r[j] as f64).collect();
            let tail: Vec<f64> = tails.iter().map(|r| r[j] as f64).collect();
            let mut z = vec![0.0; table.n_sites()];
            let mut degenerate = 0;
            let neg: Vec<f64> = draws
                .iter()
                .map(|d| {
                    z.iter_mut().zip(d.state.z.column(j).iter()).for_each(|(a, b)| *a = *b);
                    let ll = column_log_likelihood(&z, &n, &tail, d.state.sigma_z, d.state.m);
                    if !(ll > f64::NEG_INFINITY) {
                        degenerate += 1;
                        return f64::INFINITY;
                    }
                    -ll
                })
                .collect();
            (ln_t - log_sum_exp(&neg), degenerate)
        })
        .collect();
    let log_cpo: Vec<f64> = per_species.iter().map(|p| p.0).collect();
    let degenerate = per_species
        .iter()
        .enumerate()
        .filter(|(_, p)| p.1 > 0)
        .map(|(j, p)| (j, p.1))
        .collect();
    Ok(CpoReport {
        mean_log_cpo: log_cpo.iter().sum::<f64>() / n_species as f64,
        median_log_cpo: quantile(&log_cpo, 0.5),
        per_species_log_cpo: log_cpo,
        degenerate,
    })
}

/// `species,log_cpo`.
pub fn write_cpo_csv<W: Write>(report: &CpoReport, species_ids: &[String], writer: W) -> Result<()> {
    if species_ids.len() != report.per_species_log_cpo.len() {
        return Err(Error::DimensionMismatch {
            expected: report.per_species_log_cpo.len(),
            got: species_ids.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["species", "log_cpo"]).map_err(csv_err)?;
    for (id, v) in species_ids.iter().zip(&report.per_species_log_cpo) {
        w.write_record([id.as_str(), &v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::LatentState;
    use crate::special::norm_cdf;
    use nalgebra::DMatrix;

    fn table() -> SpeciesCountTable {
        SpeciesCountTable::new(
            vec!["a".into(), "b".into()],
            vec![0.0, 1.0],
            vec!["s1".into(), "s2".into()],
            vec![vec![3, 2], vec![1, 4]],
        )
        .unwrap()
    }

    fn draw(z: [[f64; 2]; 2], sigma_z: f64, m: f64) -> Draw {
        Draw {
            iteration: 1,
            state: LatentState {
                z: DMatrix::from_fn(2, 2, |i, j| z[i][j]),
                sigma_z,
                lambda: 1.0,
                m,
            },
            log_posterior: 0.0,
        }
    }

    /// Species-`j` factor written out directly from the break probabilities.
    fn hand_factor(d: &Draw, t: &SpeciesCountTable, j: usize) -> f64 {
        let mut l = 1.0;
        for i in 0..2 {
            let u = norm_cdf(d.state.z[(i, j)] / d.state.sigma_z);
            let g = 1.0 - (1.0 - u).powf(1.0 / d.state.m);
            let n = t.counts()[i][j] as i32;
            let tail: u64 = t.counts()[i][j + 1..].iter().sum();
            l *= g.powi(n) * (1.0 - g).powi(tail as i32);
        }
        l
    }

    #[test]
    fn constant_likelihood_gives_constant() {
        let t = table();
        let d = draw([[0.3, -0.2], [0.1, 0.5]], 1.0, 2.0);
        let draws = vec![d.clone(); 150];
        let r = cpo(&draws, &t).unwrap();
        for j in 0..2 {
            let c = species_log_likelihood(&d, &t, j).unwrap();
            assert!((r.per_species_log_cpo[j] - c).abs() < 1e-12);
        }
        let single = cpo(&draws[..1], &t).unwrap();
        for j in 0..2 {
            assert!((single.per_species_log_cpo[j] - r.per_species_log_cpo[j]).abs() < 1e-12);
        }
        assert!(r.degenerate.is_empty());
    }

    #[test]
    fn two_point_posterior_matches_harmonic_mean() {
        let t = table();
        let a = draw([[0.3, -0.2], [0.1, 0.5]], 1.0, 2.0);
        let b = draw([[-0.4, 0.7], [1.2, -0.1]], 1.5, 0.8);
        let r = cpo(&[a.clone(), b.clone()], &t).unwrap();
        for j in 0..2 {
            let (la, lb) = (hand_factor(&a, &t, j), hand_factor(&b, &t, j));
            let expected = 1.0 / (0.5 * (1.0 / la + 1.0 / lb));
            assert!((r.per_species_log_cpo[j] - expected.ln()).abs() < 1e-12, "{j}");
        }
        let dup = cpo(&[a.clone(), b.clone(), a, b], &t).unwrap();
        for j in 0..2 {
            assert!((dup.per_species_log_cpo[j] - r.per_species_log_cpo[j]).abs() < 1e-12);
        }
        let mean = r.per_species_log_cpo.iter().sum::<f64>() / 2.0;
        assert!((r.mean_log_cpo - mean).abs() < 1e-15);
        assert!((r.median_log_cpo - mean).abs() < 1e-12);
    }

    #[test]
    fn csv_and_errors() {
        let t = table();
        assert!(cpo(&[], &t).is_err());
        let r = cpo(&[draw([[0.0; 2]; 2], 1.0, 1.0)], &t).unwrap();
        let mut buf = Vec::new();
        write_cpo_csv(&r, t.species_ids(), &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("species,log_cpo\ns1,"));
        assert_eq!(s.lines().count(), 3);
        assert!(write_cpo_csv(&r, &t.species_ids()[..1], Vec::new()).is_err());
    }
}
