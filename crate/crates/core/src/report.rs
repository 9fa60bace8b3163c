//! JSON summary and plot-ready CSV files. Exported state labels are 1-based
//! (1 = bull).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{IccError, Result};
use crate::experiment::{ClusterOutcome, ForecastOutcome, ModelVariant, ResampleReport, StabilityReport};
use crate::forecast::{Feature, LlrSeries, Logistic};
use crate::logo::PrecisionHeader;
use crate::metrics::{ForecastReport, Spread};

pub const SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub label: usize,
    pub mean_return: f64,
    pub mu: Vec<f64>,
    pub precision: PrecisionHeader,
    pub precision_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub model: ModelVariant,
    pub k: usize,
    pub gamma: f64,
    pub cluster_sizes: Vec<usize>,
    pub switches: usize,
    pub mean_segment_length: f64,
    pub segment_length: Option<Spread>,
    pub iterations: usize,
    pub converged: bool,
    pub truth_accuracy: Option<f64>,
    pub bull_positive: usize,
    pub bear_negative: usize,
    pub sharpe_spread: Vec<Option<Spread>>,
    pub states: Vec<StateSummary>,
    pub segmentation_file: String,
    pub cumulative_file: String,
    pub sharpe_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub feature: Feature,
    pub train_len: usize,
    pub test_len: usize,
    pub logistic: Logistic,
    pub threshold: f64,
    pub metrics: ForecastReport,
    pub predictions_file: String,
    pub llr_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleSummary {
    #[serde(flatten)]
    pub report: ResampleReport,
    pub table_file: String,
}

/// Top-level document written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub clusters: Vec<ClusterSummary>,
    pub forecasts: Vec<ForecastSummary>,
    pub resamples: Vec<ResampleSummary>,
    pub stability: Vec<StabilityReport>,
}

pub enum Experiment<'a> {
    Cluster(&'a ClusterOutcome),
    Forecast(&'a ForecastOutcome),
    Resample(&'a ResampleReport),
    Stability(&'a StabilityReport),
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| IccError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn write_segmentation_csv<W: Write>(writer: W, dates: &[NaiveDate], labels: &[usize]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "state_label"])?;
    for (d, l) in dates.iter().zip(labels) {
        wtr.write_record([d.to_string(), (l + 1).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a segmentation CSV back into 0-based labels.
pub fn read_segmentation_csv<R: std::io::Read>(reader: R) -> Result<(Vec<NaiveDate>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut dates = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let d = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| IccError::Data(e.to_string()))?;
        let l: usize = rec[1].parse().map_err(|_| IccError::Data(format!("bad state label `{}`", &rec[1])))?;
        if l == 0 {
            return Err(IccError::Data("state labels start at 1".into()));
        }
        dates.push(d);
        labels.push(l - 1);
    }
    Ok((dates, labels))
}

fn write_cumulative_csv<W: Write>(writer: W, out: &ClusterOutcome) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "cumulative_mean_return", "state_label"])?;
    for ((d, c), l) in out.dates.iter().zip(&out.cumulative_return).zip(&out.labels) {
        wtr.write_record([d.to_string(), c.to_string(), (l + 1).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_sharpe_csv<W: Write>(writer: W, out: &ClusterOutcome) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["ticker", "state_label", "mean", "std", "sharpe"])?;
    for s in &out.report.stocks {
        for k in 0..out.k {
            wtr.write_record([
                s.ticker.clone(),
                (k + 1).to_string(),
                s.mean[k].to_string(),
                s.std[k].to_string(),
                opt(s.sharpe[k]),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_llr_csv<W: Write>(writer: W, llr: &LlrSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "llr"])?;
    for (d, v) in llr.dates.iter().zip(&llr.values) {
        wtr.write_record([d.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_predictions_csv<W: Write>(writer: W, out: &ForecastOutcome) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let feature_col = match out.feature {
        Feature::Llr => "llr",
        Feature::FractionPositive => "fraction_positive",
    };
    wtr.write_record(["date", feature_col, "probability", "predicted_state", "actual_state"])?;
    for p in &out.predictions {
        wtr.write_record([
            p.date.to_string(),
            p.feature.to_string(),
            p.probability.to_string(),
            (p.predicted + 1).to_string(),
            (p.actual + 1).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_table_csv<W: Write>(writer: W, report: &ResampleReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["metric", "count", "median", "p5", "p95"])?;
    for row in &report.rows {
        let (m, lo, hi) = row.spread.map_or((None, None, None), |s| (Some(s.median), Some(s.p5), Some(s.p95)));
        wtr.write_record([row.metric.clone(), row.count.to_string(), opt(m), opt(lo), opt(hi)])?;
    }
    wtr.flush()?;
    Ok(())
}

fn cluster_files(dir: &Path, i: usize, out: &ClusterOutcome) -> Result<ClusterSummary> {
    let segmentation_file = format!("cluster{i}_segmentation.csv");
    let cumulative_file = format!("cluster{i}_cumulative.csv");
    let sharpe_file = format!("cluster{i}_sharpe.csv");
    write_segmentation_csv(create(dir, &segmentation_file)?, &out.dates, &out.labels)?;
    write_cumulative_csv(create(dir, &cumulative_file)?, out)?;
    write_sharpe_csv(create(dir, &sharpe_file)?, out)?;
    let mut states = Vec::with_capacity(out.states.len());
    for (k, s) in out.states.iter().enumerate() {
        let precision_file = format!("cluster{i}_state{}_precision.csv", k + 1);
        s.precision.write_coo_csv(create(dir, &precision_file)?)?;
        states.push(StateSummary {
            label: k + 1,
            mean_return: s.mean_return(),
            mu: s.mu.clone(),
            precision: s.precision.header(),
            precision_file,
        });
    }
    let seg = &out.report.segments;
    Ok(ClusterSummary {
        model: out.model,
        k: out.k,
        gamma: out.gamma,
        cluster_sizes: out.report.sizes.clone(),
        switches: seg.switches,
        mean_segment_length: seg.mean_length,
        segment_length: seg.length_spread,
        iterations: out.iterations,
        converged: out.converged,
        truth_accuracy: out.truth_accuracy,
        bull_positive: out.report.bull_positive,
        bear_negative: out.report.bear_negative,
        sharpe_spread: out.report.sharpe_spread.clone(),
        states,
        segmentation_file,
        cumulative_file,
        sharpe_file,
    })
}

fn forecast_files(dir: &Path, i: usize, out: &ForecastOutcome) -> Result<ForecastSummary> {
    let predictions_file = format!("forecast{i}_predictions.csv");
    write_predictions_csv(create(dir, &predictions_file)?, out)?;
    let llr_file = if out.feature == Feature::Llr {
        let name = format!("forecast{i}_llr.csv");
        write_llr_csv(create(dir, &name)?, &out.llr)?;
        Some(name)
    } else {
        None
    };
    Ok(ForecastSummary {
        feature: out.feature,
        train_len: out.train_len,
        test_len: out.predictions.len(),
        logistic: out.logistic,
        threshold: out.threshold,
        metrics: out.report.clone(),
        predictions_file,
        llr_file,
    })
}

/// Writes every experiment's CSVs into `dir` and the summary to
/// `dir/report.json`. Returns the summary path.
pub fn emit_report(experiments: &[Experiment<'_>], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| IccError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut summary =
        Summary { schema_version: SCHEMA_VERSION, clusters: vec![], forecasts: vec![], resamples: vec![], stability: vec![] };
    for exp in experiments {
        match exp {
            Experiment::Cluster(out) => {
                let s = cluster_files(dir, summary.clusters.len(), out)?;
                summary.clusters.push(s);
            }
            Experiment::Forecast(out) => {
                let s = forecast_files(dir, summary.forecasts.len(), out)?;
                summary.forecasts.push(s);
            }
            Experiment::Resample(report) => {
                let table_file = format!("resample{}_table.csv", summary.resamples.len());
                write_table_csv(create(dir, &table_file)?, report)?;
                summary.resamples.push(ResampleSummary { report: (*report).clone(), table_file });
            }
            Experiment::Stability(report) => summary.stability.push((*report).clone()),
        }
    }
    let path = dir.join(SUMMARY_FILE);
    let mut w = create(dir, SUMMARY_FILE)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let file = File::open(path).map_err(|e| IccError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::experiment::{run_cluster, run_resample, ClusterSettings, ResampleExperiment, ResampleSettings};

    #[test]
    fn empty_report_is_valid_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = emit_report(&[], dir.path()).unwrap();
        let v: serde_json::Value = serde_json::from_reader(File::open(path).unwrap()).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        for key in ["clusters", "forecasts", "resamples", "stability"] {
            assert_eq!(v[key], serde_json::json!([]));
        }
    }

    #[test]
    fn cluster_run_round_trips() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(6, 400, 40.0, 5)).unwrap();
        let out = run_cluster(&panel, &ClusterSettings::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = emit_report(&[Experiment::Cluster(&out)], dir.path()).unwrap();
        let summary = read_summary(&path).unwrap();
        let c = &summary.clusters[0];
        assert_eq!(c.cluster_sizes, out.report.sizes);
        assert_eq!(c.switches, out.report.segments.switches);
        assert_eq!(c.mean_segment_length, out.report.segments.mean_length);
        assert_eq!(c.states.len(), 2);

        let (dates, labels) = read_segmentation_csv(File::open(dir.path().join(&c.segmentation_file)).unwrap()).unwrap();
        assert_eq!(dates, out.dates);
        assert_eq!(labels, out.labels);
        assert!(dir.path().join(&c.states[0].precision_file).exists());
    }

    #[test]
    fn resample_table_matches_percentile_oracle() {
        let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(12, 300, 40.0, 6)).unwrap();
        let settings = ResampleSettings {
            resamples: 100,
            basket: 6,
            seed: 11,
            experiment: ResampleExperiment::Cluster {
                settings: ClusterSettings { max_iters: 10, ..Default::default() },
            },
        };
        let report = run_resample(&panel, &settings).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[Experiment::Resample(&report)], dir.path()).unwrap();

        // Order statistics with linear interpolation, computed from the runs.
        let oracle = |mut v: Vec<f64>, q: f64| {
            v.sort_by(f64::total_cmp);
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        let switches: Vec<f64> =
            report.runs.iter().filter_map(|r| r.switches.map(|s| s as f64)).collect();
        let mut rdr = csv::Reader::from_path(dir.path().join("resample0_table.csv")).unwrap();
        let row = rdr.records().map(|r| r.unwrap()).find(|r| &r[0] == "switches").unwrap();
        let parsed: Vec<f64> = (2..5).map(|i| row[i].parse().unwrap()).collect();
        let expected = [oracle(switches.clone(), 0.5), oracle(switches.clone(), 0.05), oracle(switches, 0.95)];
        for (p, e) in parsed.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn unwritable_directory_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        File::create(&blocker).unwrap();
        assert!(emit_report(&[], &blocker.join("sub")).is_err());
    }
}
