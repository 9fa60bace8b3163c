//! The segmentation engine: penalized Mahalanobis assignment solved with a
//! Viterbi pass, alternated with per-state re-estimation until the label
//! sequence stops changing.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ReturnsPanel;
use crate::error::{IccError, Result};
use crate::linalg::{column_means, invert_spd, sample_covariance, select_rows};
use crate::logo::{log_likelihood, logo_from_covariance, Precision};
use crate::par;
use crate::rng::{stream_rng, Stream};
use crate::tmfg::{build_tmfg, SimilarityMatrix};

/// Ridge added to the dense covariance, relative to its mean diagonal.
pub const FULL_RIDGE: f64 = 1e-6;
/// Consecutive re-seeds tolerated before a fit gives up.
pub const MAX_RESEEDS: usize = 5;
/// Default target for the mean segment length when grid-searching gamma.
pub const DEFAULT_TARGET_SEGMENT: f64 = 25.0;

/// One market state: centroid, precision, and its 0-based index.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub mu: Vec<f64>,
    pub precision: Precision,
    pub label: usize,
}

impl MarketState {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Average of the centroid entries; used to tell bull from bear.
    pub fn mean_return(&self) -> f64 {
        self.mu.iter().sum::<f64>() / self.mu.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// 0-based state per observation.
    pub labels: Vec<usize>,
    /// `Σ_t cost[t][label_t] + γ · switches`.
    pub total_cost: f64,
    pub switches: usize,
}

impl Segmentation {
    pub fn from_labels(labels: Vec<usize>, costs: &DMatrix<f64>, gamma: f64) -> Self {
        let switches = count_switches(&labels);
        let fit: f64 = labels.iter().enumerate().map(|(t, &k)| costs[(t, k)]).sum();
        Self { labels, total_cost: fit + gamma * switches as f64, switches }
    }

    pub fn mean_segment_length(&self) -> f64 {
        self.labels.len() as f64 / (self.switches + 1) as f64
    }

    pub fn cluster_sizes(&self, k: usize) -> Vec<usize> {
        let mut sizes = vec![0; k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub fn count_switches(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] != w[1]).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccConfig {
    pub k: usize,
    pub gamma: f64,
    /// TMFG-LoGo precision when true, ridge-regularized dense inverse otherwise.
    pub sparse: bool,
    pub max_iters: usize,
    pub seed: u64,
    /// Smallest cluster that may be estimated; smaller clusters are re-seeded.
    pub min_cluster: usize,
    /// Independent random initializations; the fit with the highest
    /// penalized Gaussian log-likelihood is kept.
    pub restarts: usize,
}

impl Default for IccConfig {
    fn default() -> Self {
        Self { k: 2, gamma: 16.0, sparse: true, max_iters: 100, seed: 0, min_cluster: 5, restarts: 10 }
    }
}

impl IccConfig {
    fn validate(&self, panel: &ReturnsPanel) -> Result<()> {
        if self.k == 0 {
            return Err(IccError::Config("K must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(IccError::Config(format!("gamma must be finite and non-negative, got {}", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(IccError::Config("max_iters must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(IccError::Config("restarts must be positive".into()));
        }
        if self.sparse && panel.n_assets() < 4 {
            return Err(IccError::Config("the sparse estimator needs at least 4 assets".into()));
        }
        let floor = self.min_cluster.max(5);
        if panel.n_obs() < self.k * floor {
            return Err(IccError::Data(format!(
                "{} observations cannot fill {} clusters of at least {floor}",
                panel.n_obs(),
                self.k
            )));
        }
        Ok(())
    }
}

/// Squared Mahalanobis distance of `x` from the state's centroid.
pub fn mahalanobis_sq(x: &[f64], state: &MarketState) -> Result<f64> {
    if x.len() != state.dim() || state.precision.dim() != state.dim() {
        return Err(IccError::DimensionMismatch { expected: state.dim(), got: x.len() });
    }
    Ok(state.precision.quad_form(x, &state.mu))
}

/// `T × K` matrix of squared distances, rows computed in parallel.
pub fn cost_matrix(returns: &DMatrix<f64>, states: &[MarketState]) -> Result<DMatrix<f64>> {
    let (t, n) = returns.shape();
    if let Some(s) = states.iter().find(|s| s.dim() != n) {
        return Err(IccError::DimensionMismatch { expected: n, got: s.dim() });
    }
    let rows = par::map_range(t, |i| {
        let x: Vec<f64> = returns.row(i).iter().copied().collect();
        states.iter().map(|s| s.precision.quad_form(&x, &s.mu)).collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(t, states.len(), |i, k| rows[i][k]))
}

/// Minimum-cost label path for `Σ_t cost[t][k_t] + γ · #switches`.
///
/// Linear in `T·K`. Ties keep the previous state, otherwise go to the lowest
/// index; the final state is the lowest-index minimizer.
pub fn viterbi_assign(costs: &DMatrix<f64>, gamma: f64) -> Result<Segmentation> {
    let (t_len, k) = costs.shape();
    if t_len == 0 || k == 0 {
        return Err(IccError::Data("empty cost matrix".into()));
    }
    if !(gamma >= 0.0) {
        return Err(IccError::Config(format!("gamma must be non-negative, got {gamma}")));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(IccError::Numerical("non-finite cost".into()));
    }
    let argmin = |v: &[f64]| {
        let mut best = 0;
        for i in 1..v.len() {
            if v[i] < v[best] {
                best = i;
            }
        }
        best
    };

    let mut prev: Vec<f64> = (0..k).map(|j| costs[(0, j)]).collect();
    let mut cur = vec![0.0; k];
    let mut back = vec![0u32; t_len * k];
    for t in 1..t_len {
        let m = argmin(&prev);
        let jump = prev[m] + gamma;
        for j in 0..k {
            let (base, from) = if prev[j] <= jump { (prev[j], j) } else { (jump, m) };
            cur[j] = base + costs[(t, j)];
            back[t * k + j] = from as u32;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut labels = vec![0usize; t_len];
    labels[t_len - 1] = argmin(&prev);
    for t in (1..t_len).rev() {
        labels[t - 1] = back[t * k + labels[t]] as usize;
    }
    Ok(Segmentation::from_labels(labels, costs, gamma))
}

/// Centroid and precision of the rows of `obs`.
pub fn estimate_state(obs: &DMatrix<f64>, sparse: bool, label: usize, names: &[String]) -> Result<MarketState> {
    let n = obs.ncols();
    let mean = column_means(obs);
    let cov = sample_covariance(obs, &mean);
    let precision = if sparse {
        let sim = SimilarityMatrix::from_covariance(&cov, names)?;
        let graph = build_tmfg(&sim)?;
        logo_from_covariance(&cov, &graph)?
    } else {
        let mut reg = cov;
        let ridge = FULL_RIDGE * reg.trace() / n as f64;
        for i in 0..n {
            reg[(i, i)] += ridge;
        }
        let inv = invert_spd(&reg).ok_or_else(|| IccError::NotPositiveDefinite("regularized covariance".into()))?;
        Precision::dense(inv)?
    };
    Ok(MarketState { mu: mean.iter().copied().collect(), precision, label })
}

/// Result of one ICC fit.
#[derive(Debug, Clone)]
pub struct IccFit {
    pub states: Vec<MarketState>,
    pub segmentation: Segmentation,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized cost after every Viterbi pass.
    pub cost_trace: Vec<f64>,
    /// Passes whose cost rose by more than 1e-9 over the previous one.
    pub cost_increases: usize,
    pub reseeds: usize,
    pub gamma: f64,
    /// Restart that produced this fit.
    pub restart: usize,
    /// Penalized Gaussian log-likelihood used to rank restarts.
    pub score: f64,
}

fn rows_of(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); k];
    for (t, &l) in labels.iter().enumerate() {
        rows[l].push(t);
    }
    rows
}

/// Moves the `T/K` observations farthest from their current state into the
/// undersized cluster `target`.
fn reseed(labels: &mut [usize], target: usize, k: usize, distance: &[f64]) {
    let t = labels.len();
    let mut order: Vec<usize> = (0..t).filter(|&i| labels[i] != target).collect();
    order.sort_by(|&a, &b| distance[b].total_cmp(&distance[a]).then(a.cmp(&b)));
    for &i in order.iter().take(t / k) {
        labels[i] = target;
    }
}

/// Uniformly random 0-based labels for restart `restart`.
pub fn random_labels(t_len: usize, k: usize, seed: u64, restart: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, Stream::Init, restart as u64);
    (0..t_len).map(|_| rng.random_range(0..k.max(1))).collect()
}

/// Sum of per-observation Gaussian log-likelihoods under the assigned
/// states, minus the switching penalty.
pub fn penalized_log_likelihood(panel: &ReturnsPanel, states: &[MarketState], seg: &Segmentation, gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    for (t, &l) in seg.labels.iter().enumerate() {
        total += log_likelihood(&panel.observation(t), &states[l])?;
    }
    Ok(total - gamma * seg.switches as f64)
}

/// True when every state was estimated from more rows than assets, or the
/// state is sparse. A dense state fitted to fewer rows has a singular sample
/// covariance, and its ridge inverse inflates the likelihood without bound.
fn well_posed(fit: &IccFit, k: usize, n: usize, sparse: bool) -> bool {
    sparse || fit.segmentation.cluster_sizes(k).iter().all(|&s| s > n)
}

/// Fits ICC from `config.restarts` uniformly random initial assignments and
/// keeps the fit with the highest penalized log-likelihood (ties to the
/// earliest restart). Well-posed fits outrank the rest. Fails only if every
/// restart fails.
pub fn fit_icc(panel: &ReturnsPanel, config: &IccConfig) -> Result<IccFit> {
    config.validate(panel)?;
    let t_len = panel.n_obs();
    let fits = par::map_range(config.restarts, |r| {
        let mut fit = fit_icc_from_labels(panel, config, random_labels(t_len, config.k, config.seed, r))?;
        fit.restart = r;
        fit.score = penalized_log_likelihood(panel, &fit.states, &fit.segmentation, config.gamma)?;
        Ok(fit)
    });
    let mut best: Option<IccFit> = None;
    let mut first_err: Option<IccError> = None;
    for fit in fits {
        match fit {
            Ok(f) => {
                let key = |x: &IccFit| well_posed(x, config.k, panel.n_assets(), config.sparse);
                if best.as_ref().is_none_or(|b| (key(&f), f.score) > (key(b), b.score)) {
                    best = Some(f);
                }
            }
            Err(e) => {
                log::debug!("restart failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let best = best.ok_or_else(|| first_err.expect("at least one restart ran"))?;
    if !best.converged {
        log::warn!("ICC did not converge in {} iterations; keeping the lowest-cost iterate", config.max_iters);
    }
    Ok(best)
}

/// Fits ICC from a given 0-based initial assignment.
pub fn fit_icc_from_labels(panel: &ReturnsPanel, config: &IccConfig, init: Vec<usize>) -> Result<IccFit> {
    config.validate(panel)?;
    let (t_len, n) = panel.returns.shape();
    let k = config.k;
    if init.len() != t_len {
        return Err(IccError::DimensionMismatch { expected: t_len, got: init.len() });
    }
    if let Some(&bad) = init.iter().find(|&&l| l >= k) {
        return Err(IccError::Config(format!("initial label {bad} out of range for K = {k}")));
    }
    let floor = config.min_cluster.max(5);
    let preferred = 2 * n;

    let mut labels = init;
    let mut distance: Vec<f64> = {
        let mean = column_means(&panel.returns);
        (0..t_len)
            .map(|t| panel.returns.row(t).iter().zip(mean.iter()).map(|(x, m)| (x - m).powi(2)).sum())
            .collect()
    };
    let mut consecutive_reseeds = 0;
    let mut reseeds = 0;
    let mut cost_trace = Vec::new();
    let mut cost_increases = 0;
    let mut best: Option<(Vec<MarketState>, Segmentation)> = None;

    for iter in 1..=config.max_iters {
        loop {
            let sizes = rows_of(&labels, k).iter().map(Vec::len).collect::<Vec<_>>();
            let Some(small) = sizes.iter().position(|&s| s < floor) else { break };
            if consecutive_reseeds >= MAX_RESEEDS {
                return Err(IccError::EmptyCluster { cluster: small, attempts: consecutive_reseeds });
            }
            log::debug!("iteration {iter}: cluster {small} has {} rows, re-seeding", sizes[small]);
            reseed(&mut labels, small, k, &distance);
            consecutive_reseeds += 1;
            reseeds += 1;
        }

        let rows = rows_of(&labels, k);
        let states = par::map_range(k, |c| {
            if rows[c].len() < preferred {
                log::debug!("cluster {c} has {} rows, fewer than the preferred {preferred}", rows[c].len());
            }
            estimate_state(&select_rows(&panel.returns, &rows[c]), config.sparse, c, &panel.tickers)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let costs = cost_matrix(&panel.returns, &states)?;
        let seg = viterbi_assign(&costs, config.gamma)?;
        if let Some(&last) = cost_trace.last() {
            if seg.total_cost > last + 1e-9 {
                cost_increases += 1;
                log::debug!("iteration {iter}: penalized cost rose from {last} to {}", seg.total_cost);
            }
        }
        cost_trace.push(seg.total_cost);
        distance = (0..t_len).map(|t| costs[(t, seg.labels[t])]).collect();

        let fixed_point = seg.labels == labels;
        if seg.labels.iter().collect::<std::collections::BTreeSet<_>>().len() == k {
            consecutive_reseeds = 0;
        }
        labels = seg.labels.clone();
        if best.as_ref().is_none_or(|(_, b)| seg.total_cost < b.total_cost) {
            best = Some((states.clone(), seg.clone()));
        }
        if fixed_point {
            return Ok(IccFit {
                states,
                segmentation: seg,
                iterations: iter,
                converged: true,
                cost_trace,
                cost_increases,
                reseeds,
                gamma: config.gamma,
                restart: 0,
                score: f64::NAN,
            });
        }
    }
    log::debug!("no fixed point within {} iterations; keeping the lowest-cost iterate", config.max_iters);
    let (states, segmentation) = best.expect("at least one iteration ran");
    Ok(IccFit {
        states,
        segmentation,
        iterations: config.max_iters,
        converged: false,
        cost_trace,
        cost_increases,
        reseeds,
        gamma: config.gamma,
        restart: 0,
        score: f64::NAN,
    })
}

impl IccFit {
    /// Relabels states by decreasing average centroid return, so state 0 is
    /// the bull state when `K = 2`.
    pub fn oriented(mut self) -> Self {
        let k = self.states.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| self.states[b].mean_return().total_cmp(&self.states[a].mean_return()).then(a.cmp(&b)));
        let mut new_label = vec![0; k];
        for (new, &old) in order.iter().enumerate() {
            new_label[old] = new;
        }
        let mut states: Vec<MarketState> = order.iter().map(|&old| self.states[old].clone()).collect();
        for (i, s) in states.iter_mut().enumerate() {
            s.label = i;
        }
        self.states = states;
        for l in &mut self.segmentation.labels {
            *l = new_label[*l];
        }
        self
    }
}

/// Outcome of a gamma grid search.
#[derive(Debug, Clone, Serialize)]
pub struct GammaSearch {
    pub gamma: f64,
    /// `(gamma, mean segment length)`; `None` where the fit failed.
    pub candidates: Vec<(f64, Option<f64>)>,
}

/// Picks the gamma whose fit has mean segment length closest to `target`;
/// ties go to the smaller gamma.
pub fn grid_search_gamma(panel: &ReturnsPanel, config: &IccConfig, grid: &[f64], target: f64) -> Result<GammaSearch> {
    if grid.is_empty() {
        return Err(IccError::Config("empty gamma grid".into()));
    }
    let lengths = par::map_slice(grid, |&gamma| {
        let cfg = IccConfig { gamma, ..config.clone() };
        match fit_icc(panel, &cfg) {
            Ok(fit) => Some(fit.segmentation.mean_segment_length()),
            Err(e) => {
                log::warn!("gamma {gamma}: fit failed: {e}");
                None
            }
        }
    });
    let mut pick: Option<(f64, f64)> = None;
    for (&gamma, len) in grid.iter().zip(&lengths) {
        let Some(len) = len else { continue };
        let score = (len - target).abs();
        let better = match pick {
            None => true,
            Some((pg, ps)) => score < ps || (score == ps && gamma < pg),
        };
        if better {
            pick = Some((gamma, score));
        }
    }
    let (gamma, _) = pick.ok_or_else(|| IccError::Numerical("every fit in the gamma grid failed".into()))?;
    Ok(GammaSearch { gamma, candidates: grid.iter().copied().zip(lengths).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_state(mu: Vec<f64>, j: DMatrix<f64>) -> MarketState {
        MarketState { mu, precision: Precision::dense(j).unwrap(), label: 0 }
    }

    fn brute_force(costs: &DMatrix<f64>, gamma: f64) -> f64 {
        let (t, k) = costs.shape();
        let mut best = f64::INFINITY;
        for code in 0..k.pow(t as u32) {
            let mut c = code;
            let path: Vec<usize> = (0..t)
                .map(|_| {
                    let l = c % k;
                    c /= k;
                    l
                })
                .collect();
            best = best.min(Segmentation::from_labels(path, costs, gamma).total_cost);
        }
        best
    }

    fn random_costs(t: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(t, k, |_, _| rng.random::<f64>())
    }

    #[test]
    fn mahalanobis_examples() {
        let s = dense_state(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_abs_diff_eq!(mahalanobis_sq(&[1.0, 1.0], &s).unwrap(), 3.0);
        assert_eq!(mahalanobis_sq(&[0.0, 0.0], &s).unwrap(), 0.0);
        let e = dense_state(vec![1.0, 2.0, 3.0], DMatrix::identity(3, 3));
        assert_abs_diff_eq!(mahalanobis_sq(&[2.0, 0.0, 3.0], &e).unwrap(), 5.0);
        assert!(mahalanobis_sq(&[1.0], &e).is_err());
    }

    #[test]
    fn viterbi_without_penalty_is_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let costs = random_costs(50, 3, &mut rng);
        let seg = viterbi_assign(&costs, 0.0).unwrap();
        for t in 0..50 {
            let row: Vec<f64> = costs.row(t).iter().copied().collect();
            let m = (0..3).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(seg.labels[t], m);
        }
    }

    #[test]
    fn viterbi_with_huge_penalty_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let costs = random_costs(30, 3, &mut rng);
        let gamma = costs.row_iter().map(|r| r.max()).sum::<f64>() + 1.0;
        let seg = viterbi_assign(&costs, gamma).unwrap();
        let col_sums: Vec<f64> = costs.column_iter().map(|c| c.sum()).collect();
        let m = (0..3).min_by(|&a, &b| col_sums[a].total_cmp(&col_sums[b])).unwrap();
        assert!(seg.labels.iter().all(|&l| l == m));
        assert_eq!(seg.switches, 0);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let costs = random_costs(6, 3, &mut rng);
            let seg = viterbi_assign(&costs, 0.3).unwrap();
            assert_abs_diff_eq!(seg.total_cost, brute_force(&costs, 0.3), epsilon = 1e-12);
        }
        for t in 1..=8 {
            for k in 1..=3 {
                let costs = random_costs(t, k, &mut rng);
                let gamma = rng.random::<f64>() * 2.0;
                let seg = viterbi_assign(&costs, gamma).unwrap();
                assert_abs_diff_eq!(seg.total_cost, brute_force(&costs, gamma), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn viterbi_rejects_empty_and_nan() {
        assert!(viterbi_assign(&DMatrix::zeros(0, 2), 1.0).is_err());
        assert!(viterbi_assign(&DMatrix::from_element(2, 2, f64::NAN), 1.0).is_err());
        assert!(viterbi_assign(&DMatrix::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn viterbi_tie_stays() {
        let costs = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        // at t=1 staying in state 1 ties with jumping over from state 0
        let seg = viterbi_assign(&costs, 1.0).unwrap();
        assert_eq!(seg.labels, vec![1, 1, 1]);
        assert_abs_diff_eq!(seg.total_cost, 1.0);
    }

    #[test]
    fn single_state_fit() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(6, 200, 20.0, 1)).unwrap();
        let fit = fit_icc(&panel, &IccConfig { k: 1, ..Default::default() }).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.segmentation.switches, 0);
        let mean = column_means(&panel.returns);
        for (a, b) in fit.states[0].mu.iter().zip(mean.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn recovers_synthetic_regimes() {
        let (panel, truth) = generate_synthetic(&SyntheticSpec::two_regime(20, 2000, 100.0, 3)).unwrap();
        for sparse in [true, false] {
            let fit = fit_icc(&panel, &IccConfig { sparse, seed: 5, ..Default::default() }).unwrap();
            let acc = crate::metrics::permutation_accuracy(&fit.segmentation.labels, &truth, 2);
            assert!(acc >= 0.9, "sparse={sparse} accuracy {acc}");
        }
    }

    #[test]
    fn label_permutation_permutes_states() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(12, 800, 80.0, 9)).unwrap();
        let cfg = IccConfig { gamma: 8.0, ..Default::default() };
        let mut checked = 0;
        for r in 0..10 {
            let init = random_labels(800, 2, 4, r);
            let flipped: Vec<usize> = init.iter().map(|&l| 1 - l).collect();
            let (a, b) = (fit_icc_from_labels(&panel, &cfg, init), fit_icc_from_labels(&panel, &cfg, flipped));
            assert_eq!(a.is_ok(), b.is_ok());
            let (Ok(a), Ok(b)) = (a, b) else { continue };
            let mapped: Vec<usize> = b.segmentation.labels.iter().map(|&l| 1 - l).collect();
            assert_eq!(a.segmentation.labels, mapped);
            assert_eq!(a.states[0].mu, b.states[1].mu);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(6, 8, 20.0, 1)).unwrap();
        assert!(fit_icc(&panel, &IccConfig::default()).is_err());
        assert!(fit_icc(&panel, &IccConfig { k: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn oriented_puts_bull_first() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(10, 800, 80.0, 2)).unwrap();
        let fit = fit_icc(&panel, &IccConfig::default()).unwrap().oriented();
        assert!(fit.states[0].mean_return() > fit.states[1].mean_return());
        assert_eq!(fit.states[1].label, 1);
    }

    #[test]
    fn grid_search_examples() {
        let (panel, truth) = generate_synthetic(&SyntheticSpec::two_regime(10, 1000, 100.0, 6)).unwrap();
        let cfg = IccConfig::default();
        assert_eq!(grid_search_gamma(&panel, &cfg, &[16.0], 25.0).unwrap().gamma, 16.0);
        assert!(grid_search_gamma(&panel, &cfg, &[], 25.0).is_err());
        let pick = grid_search_gamma(&panel, &cfg, &[0.0, 1.0, 4.0, 16.0, 64.0], 100.0).unwrap();
        let fit = fit_icc(&panel, &IccConfig { gamma: pick.gamma, ..cfg }).unwrap();
        let true_switches = count_switches(&truth).max(1) as f64;
        let ratio = fit.segmentation.switches.max(1) as f64 / true_switches;
        assert!((0.5..=2.0).contains(&ratio), "switch ratio {ratio} at gamma {}", pick.gamma);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn optimal_on_small_instances(t in 1usize..=8, k in 1usize..=3, gamma in 0.0f64..3.0, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let costs = random_costs(t, k, &mut rng);
                let seg = viterbi_assign(&costs, gamma).unwrap();
                prop_assert!((seg.total_cost - brute_force(&costs, gamma)).abs() < 1e-12);
                prop_assert_eq!(seg.switches, count_switches(&seg.labels));
            }

            #[test]
            fn switches_non_increasing_in_gamma(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let costs = random_costs(60, 3, &mut rng);
                let mut last = usize::MAX;
                for gamma in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
                    let s = viterbi_assign(&costs, gamma).unwrap().switches;
                    prop_assert!(s <= last);
                    last = s;
                }
            }
        }
    }
}
