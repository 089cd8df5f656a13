use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SpeciesCountTable;
use crate::error::{Error, Result};
use crate::mcmc::Draw;
use crate::predictive::{map_predictive, PredictiveGrid, PredictiveOptions};
use crate::stats::quantile_sorted;
use crate::stickbreaking::WeightProfile;

use super::DiversityIndex;

/// Pointwise posterior mean and 95% band of a curve over a covariate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    /// Plug-in values at observed sites, as `(covariate, value)`.
    pub empirical_points: Vec<(f64, f64)>,
}

impl DiversityCurve {
    /// Summarizes `values[t][s]`, the value of draw `t` at grid point `s`.
    pub fn from_draws(grid: Vec<f64>, values: &[Vec<f64>]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("no draws to summarize".into()));
        }
        if let Some(row) = values.iter().find(|r| r.len() != grid.len()) {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: row.len(),
            });
        }
        let cols: Vec<(f64, f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|s| {
                let mut col: Vec<f64> = values.iter().map(|r| r[s]).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                col.sort_by(f64::total_cmp);
                let lo = quantile_sorted(&col, 0.025).min(mean);
                let hi = quantile_sorted(&col, 0.975).max(mean);
                (mean, lo, hi)
            })
            .collect();
        Ok(Self {
            grid,
            mean: cols.iter().map(|c| c.0).collect(),
            lo95: cols.iter().map(|c| c.1).collect(),
            hi95: cols.iter().map(|c| c.2).collect(),
            empirical_points: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Index value of the observed proportions at every site with positive total.
pub fn empirical_diversity(table: &SpeciesCountTable, index: DiversityIndex) -> Vec<(f64, f64)> {
    table
        .counts()
        .iter()
        .zip(table.covariates())
        .filter_map(|(row, &x)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return None;
            }
            let w = row.iter().map(|&c| c as f64 / total as f64).collect();
            let p = WeightProfile {
                weights: w,
                residual: 0.0,
            };
            Some((x, index.eval(&p)))
        })
        .collect()
}

/// Posterior curve of a diversity index over the grid, from the predictive
/// weights of every draw, with the plug-in values at observed sites.
pub fn diversity_curve(
    draws: &[Draw],
    table: &SpeciesCountTable,
    grid: &PredictiveGrid,
    index: DiversityIndex,
    options: &PredictiveOptions,
) -> Result<DiversityCurve> {
    let values = map_predictive(draws, table.covariates(), grid, options, |_, profiles| {
        profiles.iter().map(|p| index.eval(p)).collect::<Vec<f64>>()
    })?;
    let mut curve = DiversityCurve::from_draws(grid.points().to_vec(), &values)?;
    curve.empirical_points = empirical_diversity(table, index);
    Ok(curve)
}

/// `grid,mean,lo95,hi95`.
pub fn write_curve_csv<W: Write>(curve: &DiversityCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["grid", "mean", "lo95", "hi95"]).map_err(csv_err)?;
    for s in 0..curve.len() {
        w.write_record([
            curve.grid[s].to_string(),
            curve.mean[s].to_string(),
            curve.lo95[s].to_string(),
            curve.hi95[s].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use crate::mcmc::LatentState;
    use nalgebra::DMatrix;

    #[test]
    fn summary_orders_band() {
        let values: Vec<Vec<f64>> = (0..100).map(|t| vec![t as f64, 1.0]).collect();
        let c = DiversityCurve::from_draws(vec![0.0, 1.0], &values).unwrap();
        assert_eq!(c.mean, [49.5, 1.0]);
        assert!((c.lo95[0] - 2.475).abs() < 1e-12 && (c.hi95[0] - 96.525).abs() < 1e-12);
        assert_eq!((c.lo95[1], c.hi95[1]), (1.0, 1.0));
        assert!(DiversityCurve::from_draws(vec![0.0], &[]).is_err());
        assert!(DiversityCurve::from_draws(vec![0.0], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn flat_weights_give_flat_curve() {
        let table = SpeciesCountTable::zeros(vec![0.0, 1.0, 2.0], 1).unwrap();
        // A single species whose break saturates at 1 holds all the mass.
        let draw = Draw {
            iteration: 1,
            state: LatentState {
                z: DMatrix::from_element(3, 1, 40.0),
                sigma_z: 1.0,
                lambda: 1.0,
                m: 1.0,
            },
            log_posterior: 0.0,
        };
        let grid = PredictiveGrid::linspace(0.0, 2.0, 9, table.covariates()).unwrap();
        let opts = PredictiveOptions::new(KernelFamily::SquaredExponential, 1);
        let c = diversity_curve(&[draw], &table, &grid, DiversityIndex::Simpson, &opts).unwrap();
        for s in 0..c.len() {
            assert!(c.mean[s].abs() < 1e-9);
            assert_eq!(c.lo95[s], c.hi95[s]);
        }
        assert!(c.empirical_points.is_empty());
    }

    #[test]
    fn empirical_overlay() {
        let table = SpeciesCountTable::zeros(vec![0.0, 5.0], 2).unwrap();
        let t = SpeciesCountTable::new(
            vec!["s1".into(), "s2".into()],
            vec![0.0, 5.0],
            vec!["a".into(), "b".into()],
            vec![vec![2, 2], vec![4, 0]],
        )
        .unwrap();
        let pts = empirical_diversity(&t, DiversityIndex::Simpson);
        assert_eq!(pts, vec![(0.0, 0.5), (5.0, 0.0)]);
        assert!(empirical_diversity(&table, DiversityIndex::Simpson).is_empty());
    }

    #[test]
    fn curve_csv_layout() {
        let c = DiversityCurve::from_draws(vec![0.0, 2.5], &[vec![0.5, 0.25]]).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&c, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "grid,mean,lo95,hi95\n0,0.5,0.5,0.5\n2.5,0.25,0.25,0.25\n");
    }
}
