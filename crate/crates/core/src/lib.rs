//! Covariate-dependent stick-breaking priors for species abundance data.
//!
//! Counts of species at sites are modelled with site-specific GEM weights
//! whose breaks come from Gaussian processes over a covariate, so nearby
//! sites share species. The crate covers the prior ([`stickbreaking`],
//! [`kernels`]), posterior sampling ([`mcmc`]), prediction along the
//! covariate ([`predictive`]) and the summaries built from it ([`analysis`]).
//! [`oracles`] checks the implementation against closed forms.
//!
//! ```
//! use depgem::mcmc::{run_chain, SamplerConfig};
//! use depgem::simulate::{simulate, SimulationSpec};
//!
//! let data = simulate(&SimulationSpec {
//!     n_sites: 4,
//!     n_species: 5,
//!     n_baseline: 0,
//!     x_max: 3.0,
//!     lambda: 1.0,
//!     jitter_sigma: None,
//!     ..SimulationSpec::default()
//! })?;
//! let chain = run_chain(&data.table, &SamplerConfig::new(200, 100, 5, 1))?;
//! assert_eq!(chain.len(), 20);
//! # Ok::<(), depgem::Error>(())
//! ```

pub mod analysis;
pub mod data;
pub mod error;
pub mod kernels;
pub mod mcmc;
pub mod oracles;
pub mod predictive;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod stats;
pub mod stickbreaking;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod chapter1 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/stick-breaking.md")]
pub mod chapter2 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/kernels.md")]
pub mod chapter3 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sampler.md")]
pub mod chapter4 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/prediction.md")]
pub mod chapter5 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model-checking.md")]
pub mod chapter6 {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod chapter7 {}
