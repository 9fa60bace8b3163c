//! End-to-end runs: clustering with any of the five model variants, the
//! train/test forecasting experiment, basket resampling, and the LoGo versus
//! ridge likelihood-stability comparison.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{cv_ridge_precision, default_lambda_grid, fit_gmm, fraction_positive};
use crate::data::{resample_basket, ReturnsPanel};
use crate::error::{IccError, Result};
use crate::forecast::{calibrate_threshold, fit_logistic, predict_state, rolling_llr, Feature, ForecastModel, Logistic, LlrSeries};
use crate::icc::{fit_icc, IccConfig, IccFit, MarketState};
use crate::linalg::{column_means, invert_spd};
use crate::logo::{logo_from_covariance, logo_precision, Precision};
use crate::metrics::{classification_metrics, cluster_report, percentile, ClusterReport, ForecastReport, Spread};
use crate::par;
use crate::rng::{child_seed, stream_rng, Stream};
use crate::tmfg::{build_tmfg, prepare_similarity, SimilarityMatrix};

/// The five compared models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    IccSparse,
    IccFull,
    IccSparseG0,
    IccFullG0,
    Gmm,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] =
        [ModelVariant::Gmm, ModelVariant::IccFullG0, ModelVariant::IccSparseG0, ModelVariant::IccFull, ModelVariant::IccSparse];

    pub fn is_sparse(self) -> bool {
        matches!(self, ModelVariant::IccSparse | ModelVariant::IccSparseG0)
    }

    /// Penalty actually used: the `-g0` variants ignore the configured gamma.
    pub fn effective_gamma(self, gamma: f64) -> f64 {
        match self {
            ModelVariant::IccSparseG0 | ModelVariant::IccFullG0 | ModelVariant::Gmm => 0.0,
            _ => gamma,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::IccSparse => "icc-sparse",
            ModelVariant::IccFull => "icc-full",
            ModelVariant::IccSparseG0 => "icc-sparse-g0",
            ModelVariant::IccFullG0 => "icc-full-g0",
            ModelVariant::Gmm => "gmm",
        })
    }
}

impl FromStr for ModelVariant {
    type Err = IccError;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| IccError::Config(format!("unknown model `{s}`")))
    }
}

impl FromStr for Feature {
    type Err = IccError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llr" => Ok(Feature::Llr),
            "fraction-positive" => Ok(Feature::FractionPositive),
            _ => Err(IccError::Config(format!("unknown baseline `{s}`"))),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feature::Llr => "llr",
            Feature::FractionPositive => "fraction-positive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSettings {
    pub model: ModelVariant,
    pub k: usize,
    pub gamma: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        Self { model: ModelVariant::IccSparse, k: 2, gamma: 16.0, seed: 0, max_iters: 100, restarts: 10 }
    }
}

impl ClusterSettings {
    pub fn icc_config(&self) -> IccConfig {
        IccConfig {
            k: self.k,
            gamma: self.model.effective_gamma(self.gamma),
            sparse: self.model.is_sparse(),
            max_iters: self.max_iters,
            seed: self.seed,
            restarts: self.restarts,
            ..IccConfig::default()
        }
    }
}

/// A fitted clustering with states ordered from bull (0) to bear.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub model: ModelVariant,
    pub k: usize,
    pub gamma: f64,
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<usize>,
    /// Cumulative cross-sectional mean return.
    pub cumulative_return: Vec<f64>,
    pub states: Vec<MarketState>,
    pub report: ClusterReport,
    pub iterations: usize,
    pub converged: bool,
    /// Accuracy against known labels, up to relabeling, when available.
    pub truth_accuracy: Option<f64>,
}

fn cumulative_mean(panel: &ReturnsPanel) -> Vec<f64> {
    let mut acc = 0.0;
    panel
        .returns
        .row_iter()
        .map(|r| {
            acc += r.mean();
            acc
        })
        .collect()
}

/// Relabels clusters by decreasing average return of their rows.
fn orient_labels(panel: &ReturnsPanel, labels: &mut [usize], k: usize) {
    let mut sums = vec![(0.0, 0usize); k];
    for (t, &l) in labels.iter().enumerate() {
        sums[l].0 += panel.returns.row(t).mean();
        sums[l].1 += 1;
    }
    let avg: Vec<f64> = sums.iter().map(|&(s, c)| if c > 0 { s / c as f64 } else { f64::NEG_INFINITY }).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]).then(a.cmp(&b)));
    let mut map = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new;
    }
    for l in labels {
        *l = map[*l];
    }
}

pub fn run_cluster(panel: &ReturnsPanel, settings: &ClusterSettings) -> Result<ClusterOutcome> {
    let k = settings.k;
    let (labels, states, iterations, converged, gamma) = match settings.model {
        ModelVariant::Gmm => {
            let gmm = fit_gmm(panel, k, settings.seed)?;
            let mut labels = gmm.labels();
            orient_labels(panel, &mut labels, k);
            (labels, Vec::new(), gmm.iterations, gmm.converged, 0.0)
        }
        _ => {
            let cfg = settings.icc_config();
            let fit = fit_icc(panel, &cfg)?.oriented();
            (fit.segmentation.labels, fit.states, fit.iterations, fit.converged, cfg.gamma)
        }
    };
    let report = cluster_report(panel, &labels, k)?;
    Ok(ClusterOutcome {
        model: settings.model,
        k,
        gamma,
        dates: panel.dates.clone(),
        cumulative_return: cumulative_mean(panel),
        labels,
        states,
        report,
        iterations,
        converged,
        truth_accuracy: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSettings {
    pub gamma: f64,
    pub sparse: bool,
    pub delta: usize,
    pub horizon: usize,
    /// Fraction of rows used for training.
    pub split: f64,
    pub threshold_folds: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        Self {
            gamma: 16.0,
            sparse: true,
            delta: crate::forecast::DEFAULT_DELTA,
            horizon: 1,
            split: 0.65,
            threshold_folds: 5,
            seed: 0,
            max_iters: 100,
            restarts: 10,
        }
    }
}

/// One test-set prediction, labels 0-based (0 = bull).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub feature: f64,
    pub probability: f64,
    pub predicted: usize,
    pub actual: usize,
}

#[derive(Debug, Clone)]
pub struct ForecastOutcome {
    pub feature: Feature,
    pub train_len: usize,
    pub logistic: Logistic,
    pub threshold: f64,
    pub report: ForecastReport,
    pub predictions: Vec<PredictionRow>,
    pub llr: LlrSeries,
}

/// Train-set and whole-period segmentations shared by the forecasters.
#[derive(Debug, Clone)]
pub struct ForecastContext {
    pub settings: ForecastSettings,
    pub train_len: usize,
    pub train_fit: IccFit,
    pub full_fit: IccFit,
    pub llr: LlrSeries,
}

impl ForecastContext {
    pub fn prepare(panel: &ReturnsPanel, settings: &ForecastSettings) -> Result<Self> {
        if !(settings.split > 0.0 && settings.split < 1.0) {
            return Err(IccError::Config(format!("split must lie in (0, 1), got {}", settings.split)));
        }
        if settings.horizon == 0 || settings.delta == 0 {
            return Err(IccError::Config("delta and horizon must be at least 1".into()));
        }
        let t = panel.n_obs();
        let train_len = (settings.split * t as f64).round() as usize;
        if train_len <= settings.delta + settings.horizon || train_len >= t {
            return Err(IccError::Config(format!("split leaves {train_len} of {t} rows for training")));
        }
        let cfg = IccConfig {
            k: 2,
            gamma: settings.gamma,
            sparse: settings.sparse,
            max_iters: settings.max_iters,
            seed: settings.seed,
            restarts: settings.restarts,
            ..IccConfig::default()
        };
        let train = panel.slice_rows(0, train_len);
        let (train_fit, full_fit) = {
            let fits = par::map_range(2, |i| if i == 0 { fit_icc(&train, &cfg) } else { fit_icc(panel, &cfg) });
            let mut it = fits.into_iter();
            (it.next().unwrap()?.oriented(), it.next().unwrap()?.oriented())
        };
        let llr = rolling_llr(panel, &train_fit.states[0], &train_fit.states[1], settings.delta)?;
        Ok(Self { settings: settings.clone(), train_len, train_fit, full_fit, llr })
    }

    fn feature_at(&self, panel: &ReturnsPanel, feature: Feature, t: usize) -> Option<f64> {
        match feature {
            Feature::Llr => self.llr.at(t),
            Feature::FractionPositive => Some(fraction_positive(panel, t)),
        }
    }

    /// Fits the logistic forecaster on the training rows and scores the
    /// test rows against the whole-period segmentation.
    pub fn evaluate(&self, panel: &ReturnsPanel, feature: Feature) -> Result<ForecastOutcome> {
        let h = self.settings.horizon;
        let train_labels = &self.train_fit.segmentation.labels;
        let (x, y): (Vec<f64>, Vec<bool>) = (0..self.train_len - h)
            .filter_map(|t| self.feature_at(panel, feature, t).map(|v| (v, train_labels[t + h] == 0)))
            .unzip();
        let logistic = fit_logistic(&x, &y)?;
        let threshold = calibrate_threshold(&x, &y, self.settings.threshold_folds)?;
        let mut model = ForecastModel::new(logistic, threshold, self.settings.delta, h, feature)?;
        if feature == Feature::Llr {
            model.states = Some((self.train_fit.states[0].clone(), self.train_fit.states[1].clone()));
        }

        let actual = &self.full_fit.segmentation.labels;
        let predictions: Vec<PredictionRow> = (self.train_len..panel.n_obs())
            .filter_map(|target| {
                let v = self.feature_at(panel, feature, target - h)?;
                let (probability, predicted) = predict_state(&model, v);
                Some(PredictionRow { date: panel.dates[target], feature: v, probability, predicted, actual: actual[target] })
            })
            .collect();
        let pred: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
        let act: Vec<usize> = predictions.iter().map(|p| p.actual).collect();
        let report = classification_metrics(&pred, &act)?;
        Ok(ForecastOutcome {
            feature,
            train_len: self.train_len,
            logistic,
            threshold,
            report,
            predictions,
            llr: self.llr.clone(),
        })
    }
}

pub fn run_forecast(panel: &ReturnsPanel, settings: &ForecastSettings, feature: Feature) -> Result<ForecastOutcome> {
    ForecastContext::prepare(panel, settings)?.evaluate(panel, feature)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResampleExperiment {
    Cluster { settings: ClusterSettings },
    Forecast { settings: ForecastSettings, feature: Feature },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleSettings {
    pub resamples: usize,
    pub basket: usize,
    pub seed: u64,
    pub experiment: ResampleExperiment,
}

/// Per-basket result; `error` is set when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleRun {
    pub index: usize,
    pub tickers: Vec<String>,
    pub error: Option<String>,
    pub bull_positive: Option<usize>,
    pub bear_negative: Option<usize>,
    pub switches: Option<usize>,
    pub mean_segment_length: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub acc: Option<f64>,
    pub tnr_p_value: Option<f64>,
}

/// One table row: median with 5th and 95th percentiles across baskets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub count: usize,
    pub spread: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub settings: ResampleSettings,
    pub succeeded: usize,
    pub failed: usize,
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<ResampleRun>,
}

fn run_one(panel: &ReturnsPanel, settings: &ResampleSettings, index: usize) -> ResampleRun {
    let basket_seed = child_seed(settings.seed, Stream::Resample, index as u64);
    let fit_seed = child_seed(settings.seed, Stream::Init, index as u64);
    let mut run = ResampleRun {
        index,
        tickers: Vec::new(),
        error: None,
        bull_positive: None,
        bear_negative: None,
        switches: None,
        mean_segment_length: None,
        tpr: None,
        tnr: None,
        acc: None,
        tnr_p_value: None,
    };
    let result = (|| -> Result<()> {
        let sub = resample_basket(panel, settings.basket, basket_seed)?;
        run.tickers = sub.tickers.clone();
        match &settings.experiment {
            ResampleExperiment::Cluster { settings: cs } => {
                let out = run_cluster(&sub, &ClusterSettings { seed: fit_seed, ..cs.clone() })?;
                run.bull_positive = Some(out.report.bull_positive);
                run.bear_negative = Some(out.report.bear_negative);
                run.switches = Some(out.report.segments.switches);
                run.mean_segment_length = Some(out.report.segments.mean_length);
            }
            ResampleExperiment::Forecast { settings: fs, feature } => {
                let out = run_forecast(&sub, &ForecastSettings { seed: fit_seed, ..fs.clone() }, *feature)?;
                run.tpr = out.report.tpr;
                run.tnr = out.report.tnr;
                run.acc = Some(out.report.acc);
                run.tnr_p_value = out.report.tnr_p_value;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        run.error = Some(e.to_string());
    }
    run
}

fn aggregate(metric: &str, values: Vec<f64>) -> AggregateRow {
    AggregateRow { metric: metric.to_string(), count: values.len(), spread: Spread::of(&values) }
}

/// Runs the experiment on `resamples` random baskets. Each basket draws its
/// tickers and fit seed from its own index, so the report does not depend on
/// scheduling.
pub fn run_resample(panel: &ReturnsPanel, settings: &ResampleSettings) -> Result<ResampleReport> {
    if settings.resamples == 0 {
        return Err(IccError::Config("need at least one resample".into()));
    }
    if settings.basket > panel.n_assets() || settings.basket == 0 {
        return Err(IccError::Config(format!(
            "basket size {} must lie in 1..={}",
            settings.basket,
            panel.n_assets()
        )));
    }
    let runs = par::map_range(settings.resamples, |i| run_one(panel, settings, i));
    let ok: Vec<&ResampleRun> = runs.iter().filter(|r| r.error.is_none()).collect();
    if ok.is_empty() {
        return Err(IccError::Numerical(format!(
            "all {} resampled runs failed; first error: {}",
            runs.len(),
            runs[0].error.as_deref().unwrap_or("")
        )));
    }
    let collect = |f: &dyn Fn(&ResampleRun) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
    let rows = match settings.experiment {
        ResampleExperiment::Cluster { .. } => vec![
            aggregate("bull_positive_sharpe", collect(&|r| r.bull_positive.map(|v| v as f64))),
            aggregate("bear_negative_sharpe", collect(&|r| r.bear_negative.map(|v| v as f64))),
            aggregate("switches", collect(&|r| r.switches.map(|v| v as f64))),
            aggregate("mean_segment_length", collect(&|r| r.mean_segment_length)),
        ],
        ResampleExperiment::Forecast { .. } => vec![
            aggregate("tpr", collect(&|r| r.tpr)),
            aggregate("tnr", collect(&|r| r.tnr)),
            aggregate("acc", collect(&|r| r.acc)),
        ],
    };
    Ok(ResampleReport { settings: settings.clone(), succeeded: ok.len(), failed: runs.len() - ok.len(), rows, runs })
}

/// Per-observation log-likelihood summary on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSummary {
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
}

impl LikelihoodSummary {
    fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p5: percentile(values, 5.0),
            p95: percentile(values, 95.0),
        }
    }

    pub fn spread(&self) -> f64 {
        self.p95 - self.p5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStability {
    pub train: LikelihoodSummary,
    pub test: LikelihoodSummary,
}

impl EstimatorStability {
    pub fn gap(&self) -> f64 {
        (self.train.mean - self.test.mean).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub vol_dispersion: f64,
    pub train_len: usize,
    pub test_len: usize,
    pub ridge_lambda: f64,
    pub logo: EstimatorStability,
    pub ridge: EstimatorStability,
}

/// Default ratio between the largest and the median asset volatility in
/// [`tmfg_structured_covariance`].
pub const DEFAULT_VOL_DISPERSION: f64 = 5.0;

/// Random covariance whose inverse is supported on a TMFG: a three-factor
/// covariance is filtered through its own TMFG and LoGo-inverted, then each
/// asset is rescaled by a volatility drawn log-uniformly from
/// `[1/vol_dispersion, vol_dispersion]`.
pub fn tmfg_structured_covariance(n: usize, vol_dispersion: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(vol_dispersion >= 1.0) {
        return Err(IccError::Config(format!("volatility dispersion must be at least 1, got {vol_dispersion}")));
    }
    let loadings = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.6);
    let mut cov = &loadings * loadings.transpose();
    for i in 0..n {
        cov[(i, i)] += 0.5 + rng.random::<f64>();
    }
    let graph = build_tmfg(&SimilarityMatrix::from_covariance(&cov, &[])?)?;
    let precision = logo_from_covariance(&cov, &graph)?;
    let mut sigma =
        invert_spd(&precision.matrix).ok_or_else(|| IccError::NotPositiveDefinite("structured covariance".into()))?;
    let vols: Vec<f64> = (0..n).map(|_| vol_dispersion.powf(2.0 * rng.random::<f64>() - 1.0)).collect();
    for i in 0..n {
        for j in 0..n {
            sigma[(i, j)] *= vols[i] * vols[j];
        }
    }
    Ok(sigma)
}

fn per_observation_ll(x: &DMatrix<f64>, mean: &DVector<f64>, precision: &Precision) -> Vec<f64> {
    let state = MarketState { mu: mean.iter().copied().collect(), precision: precision.clone(), label: 0 };
    (0..x.nrows())
        .map(|t| {
            let row: Vec<f64> = x.row(t).iter().copied().collect();
            crate::logo::log_likelihood(&row, &state).expect("dimensions agree")
        })
        .collect()
}

/// LoGo versus cross-validated ridge: per-observation log-likelihoods on the
/// `train_len` rows used for estimation and on `test_len` fresh rows.
pub fn likelihood_stability(
    n: usize,
    train_len: usize,
    test_len: usize,
    vol_dispersion: f64,
    seed: u64,
) -> Result<StabilityReport> {
    let mut rng = stream_rng(seed, Stream::Synthetic, 1);
    let cov = tmfg_structured_covariance(n, vol_dispersion, &mut rng)?;
    let l = cov.cholesky().ok_or_else(|| IccError::NotPositiveDefinite("structured covariance".into()))?.unpack();
    let z = DMatrix::from_fn(train_len + test_len, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = z * l.transpose();
    let train = x.rows(0, train_len).into_owned();
    let test = x.rows(train_len, test_len).into_owned();

    let mean = column_means(&train);
    let graph = build_tmfg(&prepare_similarity(&ReturnsPanel::from_matrix(train.clone()))?)?;
    let logo = logo_precision(&train, &graph)?;
    let ridge = cv_ridge_precision(&train, &default_lambda_grid(), 5)?;
    let summarize = |p: &Precision| EstimatorStability {
        train: LikelihoodSummary::of(&per_observation_ll(&train, &mean, p)),
        test: LikelihoodSummary::of(&per_observation_ll(&test, &mean, p)),
    };
    Ok(StabilityReport {
        n,
        vol_dispersion,
        train_len,
        test_len,
        ridge_lambda: ridge.lambda,
        logo: summarize(&logo),
        ridge: summarize(&ridge.precision),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.to_string().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("icc".parse::<ModelVariant>().is_err());
        assert_eq!(ModelVariant::IccSparseG0.effective_gamma(16.0), 0.0);
        assert_eq!(ModelVariant::IccFull.effective_gamma(14.7), 14.7);
    }

    #[test]
    fn structured_truth_has_sparse_inverse() {
        let mut rng = stream_rng(3, Stream::Synthetic, 0);
        let sigma = tmfg_structured_covariance(12, 3.0, &mut rng).unwrap();
        let j = invert_spd(&sigma).unwrap();
        // a 12-vertex TMFG keeps 30 of the 66 pairs
        let mut zeros = 0;
        for i in 0..12 {
            for k in 0..i {
                if j[(i, k)].abs() < 1e-9 * (j[(i, i)] * j[(k, k)]).sqrt() {
                    zeros += 1;
                }
            }
        }
        assert_eq!(zeros, 66 - 30);
        assert!(tmfg_structured_covariance(12, 0.5, &mut rng).is_err());
    }

    #[test]
    fn gmm_single_state_cluster() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(5, 300, 30.0, 1)).unwrap();
        let out = run_cluster(&panel, &ClusterSettings { model: ModelVariant::Gmm, k: 1, ..Default::default() }).unwrap();
        assert_eq!(out.report.segments.switches, 0);
        assert_eq!(out.report.sizes, vec![300]);
    }

    #[test]
    fn forecast_runs_with_unit_window() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(12, 1000, 100.0, 2)).unwrap();
        let settings = ForecastSettings { delta: 1, ..Default::default() };
        let out = run_forecast(&panel, &settings, Feature::Llr).unwrap();
        assert_eq!(out.predictions.len(), 1000 - out.train_len);
        let fp = run_forecast(&panel, &settings, Feature::FractionPositive).unwrap();
        assert!(fp.predictions.iter().all(|p| (0.0..=1.0).contains(&p.feature)));
    }

    #[test]
    fn single_resample_percentiles_collapse() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(10, 600, 60.0, 3)).unwrap();
        let settings = ResampleSettings {
            resamples: 1,
            basket: 8,
            seed: 4,
            experiment: ResampleExperiment::Cluster { settings: ClusterSettings::default() },
        };
        let report = run_resample(&panel, &settings).unwrap();
        for row in &report.rows {
            let s = row.spread.unwrap();
            assert_eq!(s.median, s.p5);
            assert_eq!(s.median, s.p95);
        }
        let too_big = ResampleSettings { basket: 11, ..settings };
        assert!(run_resample(&panel, &too_big).is_err());
    }
}
