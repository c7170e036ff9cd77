//! Numerical toolkit for income fluctuation problems with Markov-modulated
//! discount factors, returns, and income.
//!
//! The crate solves the consumption-saving problem by time iteration on an
//! asset grid, computes and classifies asymptotic marginal propensities to
//! consume (MPCs) through a nonlinear fixed-point map on the exogenous state
//! space, and discretizes GARCH(1,1) return processes into finite Markov
//! chains with exact conditional moments.
//!
//! Module map:
//! - [`matrix`]: nonnegative-matrix machinery (spectral radius, strongly
//!   connected blocks, Neumann-series linear solves).
//! - [`environment`]: the exogenous Markov environment `{β, R, Y}`, moment
//!   diagonals, condition checks, growth detrending.
//! - [`utility`]: marginal-utility kinds (CRRA, bounded-RRA tables, and a
//!   pathological stress fixture).
//! - [`ampc`]: asymptotic MPCs: the fixed-point map, state classification,
//!   and closed-form special cases.
//! - [`policy`]: the time-iteration policy solver on an exponential asset
//!   grid.
//! - [`garch`]: GARCH(1,1) discretization and maximum-likelihood estimation.
//! - [`analysis`]: saving rates and assembly of the figure data tables.

pub mod ampc;
pub mod analysis;
pub mod environment;
pub mod error;
pub mod garch;
pub mod matrix;
pub mod policy;
pub mod utility;

pub use error::Error;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
