//! Ecological summaries over prior and posterior weight profiles.

mod cpo;
mod curve;
mod dissimilarity;
mod diversity;

pub use cpo::{cpo, species_log_likelihood, write_cpo_csv, CpoReport};
pub use curve::{diversity_curve, empirical_diversity, write_curve_csv, DiversityCurve};
pub use dissimilarity::{
    default_ec_grid, dissimilarity_curve, dissimilarity_values, ecx, ecx_table, jaccard, write_ecx_csv, DissimilarityCurve,
    EcxEstimate, Interval, DEFAULT_EC_GRID_POINTS,
};
pub use diversity::{
    good_index, shannon, simpson, simpson_prior_cov, simpson_prior_moments, simpson_prior_variance,
    simpson_variance_argmax, DiversityIndex, SimpsonCov,
};
