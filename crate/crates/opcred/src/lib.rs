//! Credibility estimation of operational-risk frequency and severity for
//! low-frequency / high-severity loss cells, with Monte Carlo capital
//! simulation.
//!
//! Losses above a threshold follow a Pareto law per cell; annual counts are
//! Poisson.  Cell parameters are estimated by two-level linear credibility:
//! cell estimators shrink towards their bank's risk profile, and bank
//! profiles shrink towards an industry collective (estimated from a
//! multi-bank panel or injected a priori).  Structural parameters at the
//! bank level come from a fixed-point iteration with a volume-weighted
//! fallback when the between-cell variance truncates at zero.
//!
//! Module map:
//! - [`domain`]: records, panels, cell configuration, CSV/JSON I/O.
//! - [`credibility`]: weighted means, convex combination, the fixed-point
//!   solver, and the industry aggregation shared by both models.
//! - [`severity`]: Pareto tail estimation and its two-level credibility fit.
//! - [`frequency`]: Poisson rate estimation and its two-level fit.
//! - [`calibration`]: scale calibration from expert opinions.
//! - [`capital`]: compound annual-loss simulation and quantile bands.
//! - [`synth`]: synthetic panel generation for simulation studies.
//! - [`report`]: serializable report structures and text rendering.

pub mod calibration;
pub mod capital;
pub mod credibility;
pub mod domain;
pub mod error;
pub mod frequency;
pub mod report;
pub mod severity;
pub mod synth;

pub use error::{Error, Result};
