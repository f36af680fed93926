//! Spatial-rank Wilcoxon-Mann-Whitney two-sample testing for functional data
//! observed on a common grid, with the mean-based competitors, Karhunen-Loeve
//! process simulators, local asymptotic power, and finite-sample power studies.

pub mod asympt;
pub mod error;
pub mod fspace;
pub mod harness;
pub mod meantests;
pub mod rng;
pub mod simproc;
pub mod wmw;

pub use error::{Error, Result};
pub use fspace::{dual_norm, lp_norm, pair, sgn, Curve, DualVector, Grid, LpGeometry, Sample, WeightMode};

