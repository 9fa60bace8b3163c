//! Comparison models: a full-covariance Gaussian mixture fitted by EM, the
//! cross-validated ridge precision, and the fraction-of-positive-returns
//! regressor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::ReturnsPanel;
use crate::error::{IccError, Result};
use crate::linalg::{column_means, invert_spd, sample_covariance, select_rows};
use crate::logo::Precision;
use crate::par;
use crate::rng::{stream_rng, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal floor of every mixture covariance, relative to its mean variance.
pub const GMM_COV_FLOOR: f64 = 1e-8;
pub const GMM_TOL: f64 = 1e-6;
pub const GMM_MAX_ITERS: usize = 500;

#[derive(Debug, Clone)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    /// Maximum-likelihood (`1/m`) covariance plus the diagonal floor.
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    /// `T × K`, rows sum to one.
    pub responsibilities: DMatrix<f64>,
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmModel {
    /// Hard assignment: most responsible component per row.
    pub fn labels(&self) -> Vec<usize> {
        self.responsibilities
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

fn floor_covariance(cov: &mut DMatrix<f64>) {
    let n = cov.nrows();
    let eps = GMM_COV_FLOOR * cov.trace() / n as f64;
    for i in 0..n {
        cov[(i, i)] += eps;
    }
}

/// k-means++ centres: first uniform, then proportional to squared distance.
fn kmeanspp(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    let t = x.nrows();
    let row = |i: usize| x.row(i).transpose();
    let mut centres = vec![row(rng.random_range(0..t))];
    let mut d2: Vec<f64> = (0..t).map(|i| (row(i) - &centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = t - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..t)
        };
        centres.push(row(next));
        let c = centres.last().unwrap().clone();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((row(i) - &c).norm_squared());
        }
    }
    centres
}

/// Log-densities of every row under one component, `None` if not PD.
fn component_log_pdf(x: &DMatrix<f64>, comp: &GmmComponent) -> Option<Vec<f64>> {
    let n = x.ncols();
    let chol = comp.covariance.clone().cholesky()?;
    let l = chol.l();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let mut centred = x.transpose();
    for mut col in centred.column_iter_mut() {
        col -= &comp.mean;
    }
    let z = l.solve_lower_triangular(&centred)?;
    Some(z.column_iter().map(|c| -0.5 * (n as f64 * LN_2PI + logdet + c.norm_squared())).collect())
}

enum EmOutcome {
    Done(GmmModel),
    Degenerate,
}

fn run_em(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> EmOutcome {
    let (t, n) = x.shape();
    let mean = column_means(x);
    let mut global = sample_covariance(x, &mean);
    floor_covariance(&mut global);
    let mut comps: Vec<GmmComponent> = kmeanspp(x, k, rng)
        .into_iter()
        .map(|m| GmmComponent { weight: 1.0 / k as f64, mean: m, covariance: global.clone() })
        .collect();
    let mut resp = DMatrix::zeros(t, k);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..GMM_MAX_ITERS {
        iterations += 1;
        // E step
        let mut logp = DMatrix::zeros(t, k);
        for (j, c) in comps.iter().enumerate() {
            let Some(lp) = component_log_pdf(x, c) else { return EmOutcome::Degenerate };
            let lw = c.weight.ln();
            for i in 0..t {
                logp[(i, j)] = lw + lp[i];
            }
        }
        let mut ll = 0.0;
        for i in 0..t {
            let m = logp.row(i).max();
            let s: f64 = logp.row(i).iter().map(|v| (v - m).exp()).sum();
            ll += m + s.ln();
            let mut norm = 0.0;
            for j in 0..k {
                let r = (logp[(i, j)] - m).exp() / s;
                resp[(i, j)] = r;
                norm += r;
            }
            for j in 0..k {
                resp[(i, j)] /= norm;
            }
        }
        let improved = trace.last().map(|&prev| ll - prev);
        trace.push(ll);
        if improved.is_some_and(|d| d < GMM_TOL) {
            converged = true;
            break;
        }
        // M step
        for (j, c) in comps.iter_mut().enumerate() {
            let nk: f64 = resp.column(j).sum();
            if nk / (t as f64) < 1e-8 || nk < 1.0 {
                return EmOutcome::Degenerate;
            }
            let r = resp.column(j);
            let mu = x.tr_mul(&r) / nk;
            let mut cov = DMatrix::zeros(n, n);
            for i in 0..t {
                let d = x.row(i).transpose() - &mu;
                cov.ger(r[i] / nk, &d, &d, 1.0);
            }
            crate::linalg::symmetrize(&mut cov);
            floor_covariance(&mut cov);
            c.weight = nk / t as f64;
            c.mean = mu;
            c.covariance = cov;
        }
    }
    EmOutcome::Done(GmmModel { components: comps, responsibilities: resp, log_likelihood_trace: trace, iterations, converged })
}

/// Full-covariance Gaussian mixture fitted by EM from k-means++ seeding.
///
/// Stops once the log-likelihood improves by less than `1e-6` or after 500
/// iterations. A degenerate component triggers one re-seeded restart.
pub fn fit_gmm(panel: &ReturnsPanel, k: usize, seed: u64) -> Result<GmmModel> {
    let x = &panel.returns;
    if k == 0 || x.nrows() < k {
        return Err(IccError::Config(format!("cannot fit {k} components to {} rows", x.nrows())));
    }
    for attempt in 0..2 {
        let mut rng = stream_rng(seed, Stream::Mixture, attempt);
        match run_em(x, k, &mut rng) {
            EmOutcome::Done(model) => return Ok(model),
            EmOutcome::Degenerate => log::warn!("GMM attempt {attempt}: degenerate component, re-seeding"),
        }
    }
    Err(IccError::Numerical(format!("Gaussian mixture with {k} components degenerated twice")))
}

#[derive(Debug, Clone)]
pub struct RidgePrecision {
    pub precision: Precision,
    pub lambda: f64,
    pub cv_folds: Option<usize>,
}

/// `(S + λI)⁻¹` from a covariance matrix.
pub fn ridge_from_covariance(cov: &DMatrix<f64>, lambda: f64) -> Result<Precision> {
    if !(lambda >= 0.0) {
        return Err(IccError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = cov.nrows();
    let mut reg = cov.clone();
    for i in 0..n {
        reg[(i, i)] += lambda;
    }
    let singular = || if lambda == 0.0 { IccError::SingularCovariance } else { IccError::NotPositiveDefinite("S + λI".into()) };
    let inv = invert_spd(&reg).ok_or_else(singular)?;
    Precision::dense(inv).map_err(|_| singular())
}

/// Ridge precision of the rows of `obs`.
pub fn ridge_precision(obs: &DMatrix<f64>, lambda: f64) -> Result<RidgePrecision> {
    let mean = column_means(obs);
    let precision = ridge_from_covariance(&sample_covariance(obs, &mean), lambda)?;
    Ok(RidgePrecision { precision, lambda, cv_folds: None })
}

/// Twenty log-spaced points in `[1e-4, 1e1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..20).map(|i| 10f64.powf(-4.0 + 5.0 * i as f64 / 19.0)).collect()
}

/// Contiguous `[start, end)` row ranges of `folds` near-equal blocks.
pub fn contiguous_folds(rows: usize, folds: usize) -> Vec<(usize, usize)> {
    (0..folds).map(|f| (f * rows / folds, (f + 1) * rows / folds)).collect()
}

fn mean_gaussian_ll(x: &DMatrix<f64>, mean: &DVector<f64>, precision: &Precision) -> f64 {
    let n = x.ncols() as f64;
    let mu: Vec<f64> = mean.iter().copied().collect();
    let total: f64 = x
        .row_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().copied().collect();
            0.5 * (precision.logdet - precision.quad_form(&v, &mu) - n * LN_2PI)
        })
        .sum();
    total / x.nrows().max(1) as f64
}

/// Mean held-out log-likelihood of ridge precision at each λ over
/// contiguous folds.
pub fn cv_lambda_scores(obs: &DMatrix<f64>, grid: &[f64], folds: usize) -> Result<Vec<f64>> {
    if folds < 2 || folds > obs.nrows() {
        return Err(IccError::Config(format!("need 2 <= folds <= rows, got {folds}")));
    }
    let blocks = contiguous_folds(obs.nrows(), folds);
    let splits: Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = blocks
        .iter()
        .map(|&(s, e)| {
            let train_rows: Vec<usize> = (0..obs.nrows()).filter(|&i| i < s || i >= e).collect();
            let train = select_rows(obs, &train_rows);
            let mean = column_means(&train);
            let cov = sample_covariance(&train, &mean);
            (cov, mean, obs.rows(s, e - s).into_owned())
        })
        .collect();
    Ok(par::map_slice(grid, |&lambda| {
        let mut total = 0.0;
        for (cov, mean, test) in &splits {
            match ridge_from_covariance(cov, lambda) {
                Ok(p) => total += mean_gaussian_ll(test, mean, &p),
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total / splits.len() as f64
    }))
}

/// λ with the best mean held-out likelihood; ties go to the larger λ.
pub fn cv_select_lambda(obs: &DMatrix<f64>, grid: &[f64], folds: usize) -> Result<f64> {
    if grid.is_empty() {
        return Err(IccError::Config("empty lambda grid".into()));
    }
    let scores = cv_lambda_scores(obs, grid, folds)?;
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, &score) in grid.iter().zip(&scores) {
        let better = match best {
            None => true,
            Some((bl, bs)) => score > bs || (score == bs && lambda > bl),
        };
        if better {
            best = Some((lambda, score));
        }
    }
    let (lambda, score) = best.unwrap();
    if score == f64::NEG_INFINITY {
        return Err(IccError::Numerical("no lambda in the grid gave a valid precision".into()));
    }
    Ok(lambda)
}

/// Cross-validated ridge precision fitted on all of `obs`.
pub fn cv_ridge_precision(obs: &DMatrix<f64>, grid: &[f64], folds: usize) -> Result<RidgePrecision> {
    let lambda = cv_select_lambda(obs, grid, folds)?;
    let mut fit = ridge_precision(obs, lambda)?;
    fit.cv_folds = Some(folds);
    Ok(fit)
}

/// Share of strictly positive returns in row `t`; zeros count as non-positive.
pub fn fraction_positive(panel: &ReturnsPanel, t: usize) -> f64 {
    let row = panel.returns.row(t);
    row.iter().filter(|&&r| r > 0.0).count() as f64 / row.len().max(1) as f64
}
