//! Price and return panels, CSV ingestion, basket resampling and synthetic
//! regime-switching data.
//!
//! State labels are 0-based inside the library and written 1-based in every
//! exported file.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{IccError, Result};
use crate::rng::{stream_rng, Stream};

/// Daily closing prices, `T × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub prices: DMatrix<f64>,
}

/// Daily log-returns, `T × n`; row `t` is one multivariate observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: DMatrix<f64>,
}

fn check_axes(dates: &[NaiveDate], tickers: &[String], rows: usize, cols: usize) -> Result<()> {
    if dates.len() != rows {
        return Err(IccError::DimensionMismatch { expected: rows, got: dates.len() });
    }
    if tickers.len() != cols {
        return Err(IccError::DimensionMismatch { expected: cols, got: tickers.len() });
    }
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(IccError::Data(format!("dates not strictly increasing at {}", w[1])));
    }
    Ok(())
}

fn parse_cell(cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| IccError::Data(format!("cannot parse `{cell}` as a number")))?;
    Ok(v.is_finite().then_some(v))
}

/// Reads `date,<ticker>...` CSV. Tickers with any gap are dropped.
fn read_wide_csv<R: Read>(reader: R) -> Result<(Vec<NaiveDate>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(|h| h.to_ascii_lowercase()) != Some("date".into()) {
        return Err(IccError::Data("first CSV column must be `date`".into()));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut dates = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| IccError::Data(format!("bad date `{}`: {e}", &record[0])))?;
        let row = (1..=tickers.len())
            .map(|j| record.get(j).map_or(Ok(None), parse_cell))
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        cells.push(row);
    }
    let keep: Vec<usize> = (0..tickers.len())
        .filter(|&j| cells.iter().all(|row| row[j].is_some()))
        .collect();
    if keep.len() < tickers.len() {
        log::info!("dropped {} tickers with gaps", tickers.len() - keep.len());
    }
    let values = DMatrix::from_fn(dates.len(), keep.len(), |i, j| cells[i][keep[j]].unwrap());
    let tickers = keep.iter().map(|&j| tickers[j].clone()).collect();
    Ok((dates, tickers, values))
}

fn write_wide_csv<W: Write>(
    writer: W,
    dates: &[NaiveDate],
    tickers: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(tickers.iter().cloned());
    wtr.write_record(&header)?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.format("%Y-%m-%d").to_string()];
        row.extend((0..tickers.len()).map(|j| values[(t, j)].to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        check_axes(&dates, &tickers, prices.nrows(), prices.ncols())?;
        Ok(Self { dates, tickers, prices })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let (dates, tickers, prices) = read_wide_csv(reader)?;
        Self::new(dates, tickers, prices)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(open(path.as_ref())?)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        write_wide_csv(writer, &self.dates, &self.tickers, &self.prices)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}

impl ReturnsPanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        check_axes(&dates, &tickers, returns.nrows(), returns.ncols())?;
        Ok(Self { dates, tickers, returns })
    }

    /// Panel with synthetic business-day dates and `A1..An` tickers.
    pub fn from_matrix(returns: DMatrix<f64>) -> Self {
        let dates = business_days(first_synthetic_date(), returns.nrows());
        let tickers = (1..=returns.ncols()).map(|i| format!("A{i}")).collect();
        Self { dates, tickers, returns }
    }

    pub fn n_obs(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn observation(&self, t: usize) -> Vec<f64> {
        self.returns.row(t).iter().copied().collect()
    }

    /// Contiguous row range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> ReturnsPanel {
        ReturnsPanel {
            dates: self.dates[start..end].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns.rows(start, end - start).into_owned(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> ReturnsPanel {
        ReturnsPanel {
            dates: self.dates.clone(),
            tickers: cols.iter().map(|&c| self.tickers[c].clone()).collect(),
            returns: self.returns.select_columns(cols),
        }
    }

    /// Cumulative exponentiation starting from `base` on the business day
    /// before the first return.
    pub fn to_prices(&self, base: f64) -> PricePanel {
        let (t, n) = self.returns.shape();
        let mut prices = DMatrix::zeros(t + 1, n);
        for j in 0..n {
            let mut log_p = base.ln();
            prices[(0, j)] = base;
            for i in 0..t {
                log_p += self.returns[(i, j)];
                prices[(i + 1, j)] = log_p.exp();
            }
        }
        let mut dates = Vec::with_capacity(t + 1);
        dates.push(self.dates.first().map_or(first_synthetic_date(), |&d| previous_business_day(d)));
        dates.extend_from_slice(&self.dates);
        PricePanel { dates, tickers: self.tickers.clone(), prices }
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let (dates, tickers, returns) = read_wide_csv(reader)?;
        Self::new(dates, tickers, returns)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(open(path.as_ref())?)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        write_wide_csv(writer, &self.dates, &self.tickers, &self.returns)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}

/// `r_t = ln P_{t+1} - ln P_t`, one row shorter than the price panel.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnsPanel> {
    let (t, n) = panel.prices.shape();
    for i in 0..t {
        for j in 0..n {
            let p = panel.prices[(i, j)];
            if !(p > 0.0) {
                return Err(IccError::NonPositivePrice {
                    date: panel.dates[i],
                    ticker: panel.tickers[j].clone(),
                    price: p,
                });
            }
        }
    }
    if t < 2 {
        return Err(IccError::Data("need at least two price rows".into()));
    }
    let returns = DMatrix::from_fn(t - 1, n, |i, j| panel.prices[(i + 1, j)].ln() - panel.prices[(i, j)].ln());
    Ok(ReturnsPanel {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        returns,
    })
}

/// `m` tickers drawn uniformly without replacement, in draw order.
pub fn resample_basket(panel: &ReturnsPanel, m: usize, seed: u64) -> Result<ReturnsPanel> {
    let n = panel.n_assets();
    if m > n {
        return Err(IccError::Config(format!("basket size {m} exceeds {n} available tickers")));
    }
    if m == 0 {
        return Err(IccError::Config("basket size must be positive".into()));
    }
    let mut rng = stream_rng(seed, Stream::Resample, 0);
    let cols = sample(&mut rng, n, m).into_vec();
    Ok(panel.select_columns(&cols))
}

/// Covariance of one synthetic regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// `scale · I`
    Identity { scale: f64 },
    /// Common volatility `vol` and pairwise correlation `rho`.
    Equicorrelated { vol: f64, rho: f64 },
    /// Row-major dense matrix.
    Dense { rows: Vec<Vec<f64>> },
}

impl CovarianceSpec {
    pub fn to_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            CovarianceSpec::Identity { scale } => Ok(DMatrix::identity(n, n) * *scale),
            CovarianceSpec::Equicorrelated { vol, rho } => Ok(DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    vol * vol
                } else {
                    rho * vol * vol
                }
            })),
            CovarianceSpec::Dense { rows } => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(IccError::DimensionMismatch { expected: n, got: rows.len() });
                }
                let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                if (0..n).any(|i| (0..i).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12)) {
                    return Err(IccError::Config("dense covariance is not symmetric".into()));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub mean: Vec<f64>,
    pub covariance: CovarianceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    pub regimes: Vec<Regime>,
    /// Expected segment length in days.
    pub persistence: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two regimes with means `±0.05` and equal-determinant covariances that
    /// differ in correlation: a calm state (independent, unit volatility)
    /// and a stressed state (correlation 0.6, volatility rescaled so both
    /// covariances have the same determinant).
    pub fn two_regime(n: usize, t: usize, persistence: f64, seed: u64) -> Self {
        let (rho_calm, rho_stress) = (0.0, 0.6);
        let log_det = |rho: f64| (n as f64 - 1.0) * (1.0 - rho).ln() + (1.0 + (n as f64 - 1.0) * rho).ln();
        let vol_stress = ((log_det(rho_calm) - log_det(rho_stress)) / (2.0 * n as f64)).exp();
        Self {
            n,
            t,
            regimes: vec![
                Regime {
                    mean: vec![0.05; n],
                    covariance: CovarianceSpec::Equicorrelated { vol: 1.0, rho: rho_calm },
                },
                Regime {
                    mean: vec![-0.05; n],
                    covariance: CovarianceSpec::Equicorrelated { vol: vol_stress, rho: rho_stress },
                },
            ],
            persistence,
            seed,
        }
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| IccError::Data(format!("cannot open {}: {e}", path.display())))
}

/// First date used for synthetic panels.
pub fn first_synthetic_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).unwrap()
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

fn previous_business_day(d: NaiveDate) -> NaiveDate {
    let mut p = d - Days::new(1);
    while is_weekend(p) {
        p = p - Days::new(1);
    }
    p
}

/// `count` consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !is_weekend(d) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Regime-switching Gaussian returns plus the true 0-based labels.
///
/// The label chain stays with probability `1 - 1/persistence` and otherwise
/// jumps uniformly to one of the other regimes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(ReturnsPanel, Vec<usize>)> {
    let (n, t, k) = (spec.n, spec.t, spec.regimes.len());
    if k == 0 || n == 0 || t == 0 {
        return Err(IccError::Config("synthetic spec needs n, T and at least one regime".into()));
    }
    if !(spec.persistence >= 1.0) {
        return Err(IccError::Config("persistence must be at least 1".into()));
    }
    let mut factors = Vec::with_capacity(k);
    for (idx, regime) in spec.regimes.iter().enumerate() {
        if regime.mean.len() != n {
            return Err(IccError::DimensionMismatch { expected: n, got: regime.mean.len() });
        }
        let cov = regime.covariance.to_matrix(n)?;
        let chol = cov
            .cholesky()
            .ok_or_else(|| IccError::NotPositiveDefinite(format!("covariance of regime {idx}")))?;
        factors.push((DVector::from_column_slice(&regime.mean), chol.unpack()));
    }

    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 0);
    let switch_p = if k > 1 { 1.0 / spec.persistence } else { 0.0 };
    let mut labels = Vec::with_capacity(t);
    let mut state = rng.random_range(0..k);
    for i in 0..t {
        if i > 0 && rng.random::<f64>() < switch_p {
            let jump = rng.random_range(1..k);
            state = (state + jump) % k;
        }
        labels.push(state);
    }

    let mut returns = DMatrix::zeros(t, n);
    let mut z = DVector::zeros(n);
    for (i, &s) in labels.iter().enumerate() {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let (mean, l) = &factors[s];
        let x = mean + l * &z;
        returns.set_row(i, &x.transpose());
    }
    let dates = business_days(first_synthetic_date(), t + 1)[1..].to_vec();
    let tickers = (1..=n).map(|i| format!("A{i}")).collect();
    Ok((ReturnsPanel { dates, tickers, returns }, labels))
}
