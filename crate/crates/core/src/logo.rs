//! LoGo sparse precision matrices on a TMFG.
//!
//! For a chordal graph the inverse of the maximum-entropy completion of a
//! covariance is the sum of inverted clique blocks minus the sum of inverted
//! separator blocks. Only 4×4 and 3×3 inversions are needed, so the estimate
//! is cheap and has exactly the graph's sparsity pattern.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IccError, Result};
use crate::icc::{mahalanobis_sq, MarketState};
use crate::linalg::{column_means, condition_number_sym, invert_spd, log_det_spd, principal_submatrix, sample_covariance};
use crate::par;
use crate::tmfg::TmfgGraph;

/// Condition number above which a local block is jittered.
pub const SHRINK_CONDITION: f64 = 1e12;
/// Jitter added to the diagonal, relative to the mean diagonal entry.
pub const SHRINK_RELATIVE: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A precision matrix with its cached log-determinant.
///
/// `support` is the off-diagonal pattern `(i, j)`, `i < j`, for LoGo
/// estimates and `None` for dense ones. Entries outside the support are
/// exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub matrix: DMatrix<f64>,
    pub logdet: f64,
    pub support: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionHeader {
    pub n: usize,
    pub logdet: f64,
    pub sparse: bool,
    /// Stored entries including the diagonal, counting both triangles.
    pub support_size: usize,
}

impl Precision {
    /// Dense precision; fails unless `matrix` is positive definite.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let logdet = log_det_spd(&matrix).ok_or_else(|| IccError::NotPositiveDefinite("dense precision".into()))?;
        Ok(Self { matrix, logdet, support: None })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_sparse(&self) -> bool {
        self.support.is_some()
    }

    /// `(x - mu)^T J (x - mu)`, touching only stored entries when sparse.
    pub fn quad_form(&self, x: &[f64], mu: &[f64]) -> f64 {
        match &self.support {
            None => crate::linalg::quad_form(&self.matrix, x, mu),
            Some(edges) => {
                let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
                let diag: f64 = d.iter().enumerate().map(|(i, v)| self.matrix[(i, i)] * v * v).sum();
                let off: f64 = edges.iter().map(|&(i, j)| self.matrix[(i, j)] * d[i] * d[j]).sum();
                diag + 2.0 * off
            }
        }
    }

    pub fn header(&self) -> PrecisionHeader {
        let n = self.dim();
        PrecisionHeader {
            n,
            logdet: self.logdet,
            sparse: self.is_sparse(),
            support_size: self.support.as_ref().map_or(n * n, |e| n + 2 * e.len()),
        }
    }

    /// Coordinate-format `i,j,value` rows for every non-zero entry.
    pub fn write_coo_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["i", "j", "value"])?;
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                let v = self.matrix[(i, j)];
                if v != 0.0 {
                    wtr.write_record([i.to_string(), j.to_string(), v.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Inverse of the principal block on `idx`, jittered when ill-conditioned.
fn invert_block(cov: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    let mut block = principal_submatrix(cov, idx);
    if condition_number_sym(&block) > SHRINK_CONDITION {
        let jitter = SHRINK_RELATIVE * block.trace() / idx.len() as f64;
        for i in 0..idx.len() {
            block[(i, i)] += jitter;
        }
    }
    invert_spd(&block).ok_or_else(|| IccError::SingularClique(idx.to_vec()))
}

fn scatter_add(target: &mut DMatrix<f64>, idx: &[usize], block: &DMatrix<f64>, sign: f64) {
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            target[(i, j)] += sign * block[(a, b)];
        }
    }
}

/// LoGo precision from a covariance matrix and its TMFG.
pub fn logo_from_covariance(cov: &DMatrix<f64>, graph: &TmfgGraph) -> Result<Precision> {
    let n = graph.n;
    if cov.nrows() != n || cov.ncols() != n {
        return Err(IccError::DimensionMismatch { expected: n, got: cov.nrows() });
    }
    let clique_inv = par::map_slice(&graph.cliques, |c| invert_block(cov, c));
    let sep_inv = par::map_slice(&graph.separators, |s| invert_block(cov, s));

    let mut j = DMatrix::zeros(n, n);
    for (c, inv) in graph.cliques.iter().zip(clique_inv) {
        scatter_add(&mut j, c, &inv?, 1.0);
    }
    for (s, inv) in graph.separators.iter().zip(sep_inv) {
        scatter_add(&mut j, s, &inv?, -1.0);
    }
    // cancellation may leave rounding noise in the two triangles
    crate::linalg::symmetrize(&mut j);
    let logdet = log_det_spd(&j).ok_or_else(|| IccError::NotPositiveDefinite("LoGo assembly".into()))?;
    Ok(Precision { matrix: j, logdet, support: Some(graph.edges.clone()) })
}

/// LoGo precision of the rows of `obs` (`m × n`), centered at their mean.
pub fn logo_precision(obs: &DMatrix<f64>, graph: &TmfgGraph) -> Result<Precision> {
    if obs.nrows() < 2 {
        return Err(IccError::Data("LoGo needs at least two observations".into()));
    }
    let mean = column_means(obs);
    logo_from_covariance(&sample_covariance(obs, &mean), graph)
}

/// Gaussian log-density `½(log|J| − d² − p·ln 2π)` of `x` under `state`.
pub fn log_likelihood(x: &[f64], state: &MarketState) -> Result<f64> {
    let d2 = mahalanobis_sq(x, state)?;
    Ok(0.5 * (state.precision.logdet - d2 - x.len() as f64 * LN_2PI))
}
