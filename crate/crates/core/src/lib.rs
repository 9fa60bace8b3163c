//! Inverse covariance clustering (ICC) of multivariate return series.
//!
//! Observations are segmented into temporally consistent market states, each
//! described by a mean vector and a sparse precision matrix filtered through a
//! Triangulated Maximally Filtered Graph (TMFG) and inverted locally with
//! LoGo. The fitted states feed a rolling log-likelihood-ratio feature that a
//! logistic regression uses to forecast the next-day state.
//!
//! Data-parallel inner loops (cost matrices, clique inversions, grid searches,
//! resampling) run on rayon when the default `parallel` feature is enabled and
//! fall back to plain iterators otherwise. Every parallel map collects in index
//! order, so results are bit-identical for any thread count.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod forecast;
pub mod icc;
pub mod linalg;
pub mod logo;
pub mod metrics;
pub mod par;
pub mod report;
pub mod rng;
pub mod tmfg;

pub use error::{ErrorKind, IccError, Result};
