//! Evaluation statistics: Sharpe ratios, segment statistics, per-cluster
//! summaries and forecast confusion metrics with a hypergeometric test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Hypergeometric};

use crate::data::ReturnsPanel;
use crate::error::{IccError, Result};

pub const TRADING_DAYS: f64 = 252.0;

/// Annualized Sharpe ratio with zero risk-free rate.
pub fn sharpe_ratio(returns: &[f64], periods_per_year: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(IccError::Data("Sharpe ratio needs at least two observations".into()));
    }
    let (mean, sd) = mean_std(returns);
    if !(sd > 0.0) {
        return Err(IccError::Data("Sharpe ratio undefined for zero variance".into()));
    }
    Ok(mean / sd * periods_per_year.sqrt())
}

/// Mean and sample (`1/(m-1)`) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

/// Percentile `q ∈ [0, 100]` by linear interpolation between order
/// statistics. `NaN` for an empty slice.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Median with 5th and 95th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

impl Spread {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            median: percentile(values, 50.0),
            p5: percentile(values, 5.0),
            p95: percentile(values, 95.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub switches: usize,
    /// Run lengths in order of appearance.
    pub lengths: Vec<usize>,
    pub mean_length: f64,
    pub length_spread: Option<Spread>,
}

/// Switch count and run-length distribution of a label sequence.
pub fn temporal_stats(labels: &[usize]) -> SegmentStats {
    let mut lengths = Vec::new();
    let mut run = 0;
    for (i, &l) in labels.iter().enumerate() {
        if i > 0 && l != labels[i - 1] {
            lengths.push(run);
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        lengths.push(run);
    }
    let as_f: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    SegmentStats {
        switches: lengths.len().saturating_sub(1),
        mean_length: labels.len() as f64 / lengths.len().max(1) as f64,
        length_spread: Spread::of(&as_f),
        lengths,
    }
}

/// Per-ticker moments and Sharpe ratio within each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockClusterStats {
    pub ticker: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `None` where a cluster has fewer than two rows or zero variance.
    pub sharpe: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub sizes: Vec<usize>,
    pub segments: SegmentStats,
    pub stocks: Vec<StockClusterStats>,
    /// Stocks with positive Sharpe in state 0 (bull).
    pub bull_positive: usize,
    /// Stocks with negative Sharpe in the last state (bear).
    pub bear_negative: usize,
    /// Spread of per-stock Sharpe ratios for each state.
    pub sharpe_spread: Vec<Option<Spread>>,
}

pub fn cluster_report(panel: &ReturnsPanel, labels: &[usize], k: usize) -> Result<ClusterReport> {
    if labels.len() != panel.n_obs() {
        return Err(IccError::DimensionMismatch { expected: panel.n_obs(), got: labels.len() });
    }
    let mut rows = vec![Vec::new(); k];
    for (t, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(IccError::Data(format!("label {l} out of range for K = {k}")));
        }
        rows[l].push(t);
    }
    let stocks: Vec<StockClusterStats> = (0..panel.n_assets())
        .map(|j| {
            let mut st = StockClusterStats { ticker: panel.tickers[j].clone(), mean: vec![], std: vec![], sharpe: vec![] };
            for r in &rows {
                let vals: Vec<f64> = r.iter().map(|&t| panel.returns[(t, j)]).collect();
                let (m, s) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&vals) };
                st.mean.push(m);
                st.std.push(s);
                st.sharpe.push(sharpe_ratio(&vals, TRADING_DAYS).ok());
            }
            st
        })
        .collect();
    let bull_positive = stocks.iter().filter(|s| s.sharpe[0].is_some_and(|v| v > 0.0)).count();
    let bear_negative = stocks.iter().filter(|s| s.sharpe[k - 1].is_some_and(|v| v < 0.0)).count();
    let sharpe_spread = (0..k)
        .map(|c| Spread::of(&stocks.iter().filter_map(|s| s.sharpe[c]).collect::<Vec<_>>()))
        .collect();
    Ok(ClusterReport {
        sizes: rows.iter().map(Vec::len).collect(),
        segments: temporal_stats(labels),
        stocks,
        bull_positive,
        bear_negative,
        sharpe_spread,
    })
}

/// Confusion counts for the bull (0) vs bear (1) forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub acc: f64,
    /// `P(TN ≥ observed)` under random assignment with the same marginals.
    pub tnr_p_value: Option<f64>,
}

/// `P(X ≥ observed)` for `X ~ Hypergeometric(population, successes, draws)`.
pub fn hypergeometric_upper_tail(population: u64, successes: u64, draws: u64, observed: u64) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    match Hypergeometric::new(population, successes, draws) {
        Ok(h) => h.sf(observed - 1).clamp(0.0, 1.0),
        Err(_) => f64::NAN,
    }
}

/// TPR, TNR and accuracy with state 0 as the positive (bull) class.
pub fn classification_metrics(predicted: &[usize], actual: &[usize]) -> Result<ForecastReport> {
    if predicted.len() != actual.len() {
        return Err(IccError::DimensionMismatch { expected: actual.len(), got: predicted.len() });
    }
    if predicted.is_empty() {
        return Err(IccError::Data("no predictions to score".into()));
    }
    if let Some(&bad) = predicted.iter().chain(actual).find(|&&l| l > 1) {
        return Err(IccError::Data(format!("label {bad} is not a two-state label")));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (a, p) {
            (0, 0) => tp += 1,
            (0, _) => fn_ += 1,
            (_, 1) => tn += 1,
            _ => fp += 1,
        }
    }
    let pos = tp + fn_;
    let neg = tn + fp;
    let total = predicted.len();
    let tpr = (pos > 0).then(|| tp as f64 / pos as f64);
    let tnr = (neg > 0).then(|| tn as f64 / neg as f64);
    let predicted_neg = tn + fn_;
    let tnr_p_value = (neg > 0).then(|| hypergeometric_upper_tail(total as u64, neg as u64, predicted_neg as u64, tn as u64));
    Ok(ForecastReport { tp, fn_, tn, fp, tpr, tnr, acc: (tp + tn) as f64 / total as f64, tnr_p_value })
}

/// Best agreement between `predicted` and `truth` over relabelings of the
/// `k` predicted states.
pub fn permutation_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let t = predicted.len().max(1) as f64;
    permutations(k)
        .iter()
        .map(|perm| predicted.iter().zip(truth).filter(|(&p, &a)| perm[p] == a).count() as f64 / t)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sharpe_examples() {
        assert_eq!(sharpe_ratio(&[0.01, -0.01, 0.02, -0.02], 252.0).unwrap(), 0.0);
        // mean 0.001, sample sd 0.01
        let r = [0.011, -0.009, 0.001];
        assert_abs_diff_eq!(sharpe_ratio(&r, 252.0).unwrap(), 0.1 * 252f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(0.1 * 252f64.sqrt(), 1.5875, epsilon = 1e-4);
        assert!(sharpe_ratio(&[0.1, 0.1], 252.0).is_err());
        assert!(sharpe_ratio(&[0.1], 252.0).is_err());
    }

    #[test]
    fn temporal_examples() {
        let s = temporal_stats(&[0; 7]);
        assert_eq!((s.switches, s.lengths.clone()), (0, vec![7]));
        let alt: Vec<usize> = (0..9).map(|i| i % 2).collect();
        let s = temporal_stats(&alt);
        assert_eq!(s.switches, 8);
        assert!(s.lengths.iter().all(|&l| l == 1));
        let s = temporal_stats(&[0, 0, 1, 1, 1, 0]);
        assert_eq!(s.switches, 2);
        assert_eq!(s.lengths, vec![2, 3, 1]);
        assert_eq!(s.length_spread.unwrap().median, 2.0);
        assert_abs_diff_eq!(s.mean_length, 2.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_abs_diff_eq!(percentile(&v, 5.0), 1.2);
        assert_abs_diff_eq!(percentile(&v, 95.0), 4.8);
        assert!(percentile(&[], 50.0).is_nan());
    }

    #[test]
    fn classification_examples() {
        let r = classification_metrics(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!((r.tpr, r.tnr, r.acc), (Some(1.0), Some(1.0), 1.0));
        let r = classification_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!((r.tpr, r.tnr, r.acc), (Some(1.0), Some(0.0), 0.5));
        let r = classification_metrics(&[0, 1], &[0, 0]).unwrap();
        assert_eq!(r.tnr, None);
        assert_eq!(r.tnr_p_value, None);
        assert!(classification_metrics(&[0], &[0, 1]).is_err());
        assert!(classification_metrics(&[2], &[0]).is_err());
    }

    fn ln_choose(n: u64, k: u64) -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
    }

    #[test]
    fn hypergeometric_tail_matches_direct_sum() {
        let (pop, succ, draws) = (60u64, 20u64, 25u64);
        let mut last = 1.0;
        for x in 0..=20u64 {
            let direct: f64 = (x..=draws.min(succ))
                .map(|i| (ln_choose(succ, i) + ln_choose(pop - succ, draws - i) - ln_choose(pop, draws)).exp())
                .sum();
            let p = hypergeometric_upper_tail(pop, succ, draws, x);
            assert!((p - direct.min(1.0)).abs() < 1e-10, "x={x}: {p} vs {direct}");
            assert!((0.0..=1.0).contains(&p));
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn permutation_accuracy_ignores_naming() {
        assert_eq!(permutation_accuracy(&[1, 1, 0, 0], &[0, 0, 1, 1], 2), 1.0);
        assert_eq!(permutation_accuracy(&[0, 1, 2], &[2, 0, 1], 3), 1.0);
    }

    #[test]
    fn cluster_report_sizes() {
        let m = nalgebra::DMatrix::from_row_slice(6, 2, &[0.1, 0.2, 0.3, 0.1, 0.2, 0.1, -0.1, -0.2, -0.3, -0.1, -0.2, 0.4]);
        let panel = ReturnsPanel::from_matrix(m);
        let r = cluster_report(&panel, &[0, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.sizes, vec![3, 3]);
        assert_eq!(r.sizes.iter().sum::<usize>(), 6);
        assert_eq!(r.bull_positive, 2);
        assert_eq!(r.bear_negative, 1);
        assert_eq!(r.segments.switches, 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segment_invariants(labels in proptest::collection::vec(0usize..3, 1..200)) {
                let s = temporal_stats(&labels);
                prop_assert_eq!(s.lengths.iter().sum::<usize>(), labels.len());
                prop_assert_eq!(s.switches, s.lengths.len() - 1);
                let sp = s.length_spread.unwrap();
                prop_assert!(sp.p5 <= sp.median && sp.median <= sp.p95);
            }

            #[test]
            fn confusion_consistency(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..200)) {
                let (p, a): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
                let r = classification_metrics(&p, &a).unwrap();
                prop_assert_eq!(r.acc, (r.tp + r.tn) as f64 / p.len() as f64);
                if let Some(tpr) = r.tpr { prop_assert_eq!(tpr, r.tp as f64 / (r.tp + r.fn_) as f64); }
                if let Some(pv) = r.tnr_p_value { prop_assert!((0.0..=1.0).contains(&pv)); }
            }
        }
    }
}
