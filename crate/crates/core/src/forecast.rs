//! Next-day state forecasting from the rolling log-likelihood ratio of two
//! fitted states, via a two-parameter logistic regression.

use chrono::NaiveDate;
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::baselines::contiguous_folds;
use crate::data::ReturnsPanel;
use crate::error::{IccError, Result};
use crate::icc::MarketState;
use crate::logo::log_likelihood;
use crate::par;

pub const GRADIENT_TOL: f64 = 1e-8;
/// Quadratic penalty used when the classes are linearly separable.
pub const SEPARABLE_RIDGE: f64 = 1e-6;
pub const DEFAULT_DELTA: usize = 24;

/// `R_t` for `t ≥ Δ-1` (0-based); earlier days have no full window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrSeries {
    pub delta: usize,
    /// Dates of the defined values, starting at row `delta - 1`.
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl LlrSeries {
    pub fn first_row(&self) -> usize {
        self.delta - 1
    }

    /// `R_t` by panel row, `None` before the first full window.
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.first_row()).and_then(|i| self.values.get(i).copied())
    }
}

/// Per-observation `L_{t,1} − L_{t,2}`.
pub fn likelihood_differences(panel: &ReturnsPanel, s1: &MarketState, s2: &MarketState) -> Result<Vec<f64>> {
    par::map_range(panel.n_obs(), |t| {
        let x = panel.observation(t);
        Ok(log_likelihood(&x, s1)? - log_likelihood(&x, s2)?)
    })
    .into_iter()
    .collect()
}

/// Sums over every full window of `delta` consecutive terms, updated in O(1)
/// per step.
pub fn window_sums(terms: &[f64], delta: usize) -> Vec<f64> {
    if delta == 0 || delta > terms.len() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(terms.len() - delta + 1);
    let mut acc: f64 = terms[..delta].iter().sum();
    out.push(acc);
    for t in delta..terms.len() {
        acc += terms[t] - terms[t - delta];
        out.push(acc);
    }
    out
}

/// Rolling log-likelihood ratio of state 1 over state 2.
pub fn rolling_llr(panel: &ReturnsPanel, s1: &MarketState, s2: &MarketState, delta: usize) -> Result<LlrSeries> {
    if delta == 0 {
        return Err(IccError::Config("delta must be at least 1".into()));
    }
    if delta > panel.n_obs() {
        return Err(IccError::Config(format!("delta {delta} exceeds {} observations", panel.n_obs())));
    }
    let diffs = likelihood_differences(panel, s1, s2)?;
    Ok(LlrSeries { delta, dates: panel.dates[delta - 1..].to_vec(), values: window_sums(&diffs, delta) })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub beta0: f64,
    pub beta1: f64,
    pub iterations: usize,
    /// ∞-norm of the (penalized) log-likelihood gradient at the solution.
    pub gradient_norm: f64,
    pub regularized: bool,
}

impl Logistic {
    pub fn probability(&self, x: f64) -> f64 {
        sigmoid(self.beta0 + self.beta1 * x)
    }
}

fn is_separable(x: &[f64], y: &[bool]) -> bool {
    let (mut min1, mut max1, mut min0, mut max0) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &c) in x.iter().zip(y) {
        if c {
            min1 = min1.min(v);
            max1 = max1.max(v);
        } else {
            min0 = min0.min(v);
            max0 = max0.max(v);
        }
    }
    max1 <= min0 || max0 <= min1
}

/// Log-likelihood, gradient and Hessian of the penalized objective.
fn objective(x: &[f64], y: &[bool], beta: &Vector2<f64>, ridge: f64) -> (f64, Vector2<f64>, Matrix2<f64>) {
    let mut ll = 0.0;
    let mut g = Vector2::zeros();
    let mut h = Matrix2::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let eta = beta[0] + beta[1] * xi;
        let p = sigmoid(eta);
        let yv = if yi { 1.0 } else { 0.0 };
        ll += yv * eta - softplus(eta);
        let r = yv - p;
        g[0] += r;
        g[1] += r * xi;
        let w = p * (1.0 - p);
        h[(0, 0)] -= w;
        h[(0, 1)] -= w * xi;
        h[(1, 1)] -= w * xi * xi;
    }
    h[(1, 0)] = h[(0, 1)];
    ll -= 0.5 * ridge * beta.norm_squared();
    g -= beta * ridge;
    h[(0, 0)] -= ridge;
    h[(1, 1)] -= ridge;
    (ll, g, h)
}

/// Maximum-likelihood logistic regression of `y` (true = state 1) on `x`
/// by damped Newton steps.
pub fn fit_logistic(x: &[f64], y: &[bool]) -> Result<Logistic> {
    if x.len() != y.len() {
        return Err(IccError::DimensionMismatch { expected: y.len(), got: x.len() });
    }
    match (y.iter().any(|&c| c), y.iter().any(|&c| !c)) {
        (true, true) => {}
        (true, false) => return Err(IccError::OneClass(1)),
        _ => return Err(IccError::OneClass(2)),
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IccError::Data("non-finite regressor".into()));
    }
    let regularized = is_separable(x, y);
    let ridge = if regularized { SEPARABLE_RIDGE } else { 0.0 };
    let mut beta = Vector2::zeros();
    let (mut ll, mut g, mut h) = objective(x, y, &beta, ridge);
    for iter in 1..=500 {
        let gnorm = g.amax();
        if gnorm < GRADIENT_TOL {
            return Ok(Logistic { beta0: beta[0], beta1: beta[1], iterations: iter - 1, gradient_norm: gnorm, regularized });
        }
        let step = match (-h).cholesky() {
            Some(c) => c.solve(&g),
            None => g * 1e-3,
        };
        let mut scale = 1.0;
        loop {
            let cand = beta + step * scale;
            let (cll, cg, ch) = objective(x, y, &cand, ridge);
            // near the optimum the likelihood gain drops below its rounding
            // error, so a smaller gradient also counts as progress
            if cll >= ll || cg.amax() < g.amax() || scale < 1e-12 {
                beta = cand;
                ll = cll;
                g = cg;
                h = ch;
                break;
            }
            scale *= 0.5;
        }
    }
    Err(IccError::Numerical(format!("logistic regression did not reach gradient {GRADIENT_TOL}")))
}

/// Thresholds `0.30, 0.31, …, 0.70`.
pub fn threshold_grid() -> Vec<f64> {
    (30..=70).map(|i| i as f64 / 100.0).collect()
}

/// Mean of TPR and TNR over whichever classes are present.
fn balanced_accuracy(scored: &[(f64, bool)], threshold: f64) -> Option<f64> {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for &(p, c) in scored {
        let pred = p > threshold;
        if c {
            pos += 1;
            tp += pred as usize;
        } else {
            neg += 1;
            tn += (!pred) as usize;
        }
    }
    let rates: Vec<f64> = [(tp, pos), (tn, neg)]
        .iter()
        .filter(|(_, d)| *d > 0)
        .map(|&(n, d)| n as f64 / d as f64)
        .collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Grid threshold with the best mean balanced accuracy over the scored
/// folds; ties go to the value nearest 0.5, then the smaller one.
pub fn select_threshold(folds: &[Vec<(f64, bool)>]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for th in threshold_grid() {
        let scores: Vec<f64> = folds.iter().filter_map(|f| balanced_accuracy(f, th)).collect();
        if scores.is_empty() {
            continue;
        }
        let score = scores.iter().sum::<f64>() / scores.len() as f64;
        let better = match best {
            None => true,
            Some((bt, bs)) => {
                score > bs + 1e-12
                    || ((score - bs).abs() <= 1e-12 && (th - 0.5).abs() < (bt - 0.5).abs() - 1e-12)
            }
        };
        if better {
            best = Some((th, score));
        }
    }
    best.map_or(0.5, |(t, _)| t)
}

/// Cut-off calibrated over contiguous folds: each fold is scored by a model
/// fitted on the remaining folds.
pub fn calibrate_threshold(x: &[f64], y: &[bool], folds: usize) -> Result<f64> {
    if folds < 2 || folds > x.len() {
        return Err(IccError::Config(format!("need 2 <= folds <= {}, got {folds}", x.len())));
    }
    let blocks = contiguous_folds(x.len(), folds);
    let scored: Vec<Option<Vec<(f64, bool)>>> = par::map_slice(&blocks, |&(s, e)| {
        let (tx, ty): (Vec<f64>, Vec<bool>) =
            (0..x.len()).filter(|&i| i < s || i >= e).map(|i| (x[i], y[i])).unzip();
        let model = fit_logistic(&tx, &ty).ok()?;
        Some((s..e).map(|i| (model.probability(x[i]), y[i])).collect())
    });
    let usable: Vec<Vec<(f64, bool)>> = scored.into_iter().flatten().collect();
    if usable.is_empty() {
        log::warn!("no fold could be scored; using threshold 0.5");
        return Ok(0.5);
    }
    Ok(select_threshold(&usable))
}

/// Regressor used by a forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    /// Rolling log-likelihood ratio of the bull over the bear state.
    Llr,
    /// Share of assets with a positive return on the day.
    FractionPositive,
}

#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub logistic: Logistic,
    pub threshold: f64,
    pub delta: usize,
    pub horizon: usize,
    pub feature: Feature,
    /// Bull and bear states behind the LLR feature.
    pub states: Option<(MarketState, MarketState)>,
}

impl ForecastModel {
    pub fn new(logistic: Logistic, threshold: f64, delta: usize, horizon: usize, feature: Feature) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(IccError::Config(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        if delta == 0 || horizon == 0 {
            return Err(IccError::Config("delta and horizon must be at least 1".into()));
        }
        Ok(Self { logistic, threshold, delta, horizon, feature, states: None })
    }
}

/// Probability of the bull state and the predicted 0-based label.
pub fn predict_state(model: &ForecastModel, r: f64) -> (f64, usize) {
    let p = model.logistic.probability(r);
    (p, if p > model.threshold { 0 } else { 1 })
}
