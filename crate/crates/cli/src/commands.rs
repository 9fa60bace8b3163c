use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use icc_core::data::{generate_synthetic, PricePanel, ReturnsPanel, SyntheticSpec};
use icc_core::experiment::{
    run_cluster, run_resample, ClusterSettings, ForecastContext, ForecastSettings, ResampleExperiment, ResampleSettings,
};
use icc_core::icc::{grid_search_gamma, IccConfig};
use icc_core::metrics::permutation_accuracy;
use icc_core::report::{emit_report, write_segmentation_csv, Experiment};
use icc_core::rng::{child_seed, Stream};
use icc_core::{IccError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{CommandKind, ExperimentKind, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let file = File::open(path).map_err(|e| IccError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| IccError::Config(format!("bad manifest {}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_VERSION {
            return Err(IccError::Config(format!("unsupported manifest version {}", m.schema_version)));
        }
        m.config.validate()?;
        Ok(m)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| IccError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn synthetic_spec(cfg: &RunConfig) -> SyntheticSpec {
    SyntheticSpec::two_regime(cfg.n, cfg.t, cfg.persistence, child_seed(cfg.seed, Stream::Synthetic, 0))
}

/// Returns the panel and, for synthetic runs, the true 0-based labels.
fn load_panel(cfg: &RunConfig) -> Result<(ReturnsPanel, Option<Vec<usize>>)> {
    if cfg.synthetic {
        let (panel, truth) = generate_synthetic(&synthetic_spec(cfg))?;
        return Ok((panel, Some(truth)));
    }
    let path = cfg.input.as_ref().expect("validated: input or synthetic");
    let prices = PricePanel::read_csv(path)?;
    let dropped = prices.tickers.len();
    let returns = icc_core::data::log_returns(&prices)?;
    log::info!("loaded {} days of {} tickers from {}", returns.n_obs(), dropped, path.display());
    Ok((returns, None))
}

fn cluster_settings(cfg: &RunConfig) -> ClusterSettings {
    ClusterSettings {
        model: cfg.model,
        k: cfg.k,
        gamma: cfg.gamma,
        seed: cfg.seed,
        max_iters: cfg.max_iters,
        restarts: cfg.restarts,
    }
}

fn forecast_settings(cfg: &RunConfig, gamma: f64) -> ForecastSettings {
    ForecastSettings {
        gamma,
        sparse: cfg.sparse,
        delta: cfg.delta,
        horizon: cfg.horizon,
        split: cfg.split,
        threshold_folds: 5,
        seed: cfg.seed,
        max_iters: cfg.max_iters,
        restarts: cfg.restarts,
    }
}

/// Penalty to use: the grid-search pick when a grid is configured.
fn select_gamma(cfg: &RunConfig, panel: &ReturnsPanel) -> Result<f64> {
    let Some(grid) = &cfg.gamma_grid else { return Ok(cfg.gamma) };
    if cfg.model.effective_gamma(1.0) == 0.0 {
        return Ok(0.0);
    }
    let icc = IccConfig {
        k: cfg.k,
        gamma: cfg.gamma,
        sparse: cfg.sparse,
        max_iters: cfg.max_iters,
        seed: cfg.seed,
        restarts: cfg.restarts,
        ..IccConfig::default()
    };
    let pick = grid_search_gamma(panel, &icc, grid, cfg.target_length)?;
    log::info!("grid search picked gamma = {}", pick.gamma);
    Ok(pick.gamma)
}

/// Runs the configured command, writing its outputs and `manifest.json`
/// into `out`. Returns the one-line summary printed on success.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<String> {
    fs::create_dir_all(out).map_err(|e| IccError::Data(format!("cannot create {}: {e}", out.display())))?;
    let line = match cfg.command {
        CommandKind::Cluster => cmd_cluster(cfg, out)?,
        CommandKind::Forecast => cmd_forecast(cfg, out)?,
        CommandKind::Resample => cmd_resample(cfg, out)?,
        CommandKind::Synth => cmd_synth(cfg, out)?,
    };
    let manifest = Manifest { schema_version: MANIFEST_VERSION, tool_version: env!("CARGO_PKG_VERSION").into(), config: cfg.clone() };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(line)
}

fn cmd_cluster(cfg: &RunConfig, out: &Path) -> Result<String> {
    let (panel, truth) = load_panel(cfg)?;
    let gamma = select_gamma(cfg, &panel)?;
    let mut outcome = run_cluster(&panel, &ClusterSettings { gamma, ..cluster_settings(cfg) })?;
    if let Some(truth) = &truth {
        outcome.truth_accuracy = Some(permutation_accuracy(&outcome.labels, truth, cfg.k.max(2)));
    }
    emit_report(&[Experiment::Cluster(&outcome)], out)?;
    let seg = &outcome.report.segments;
    let mut line = format!(
        "{}: sizes {:?}, {} switches, mean segment {:.1} days, gamma {}",
        cfg.model, outcome.report.sizes, seg.switches, seg.mean_length, outcome.gamma
    );
    if let Some(acc) = outcome.truth_accuracy {
        line.push_str(&format!(", accuracy vs truth {acc:.3}"));
    }
    Ok(line)
}

fn cmd_forecast(cfg: &RunConfig, out: &Path) -> Result<String> {
    let (panel, _) = load_panel(cfg)?;
    let gamma = select_gamma(cfg, &panel)?;
    let ctx = ForecastContext::prepare(&panel, &forecast_settings(cfg, gamma))?;
    let outcome = ctx.evaluate(&panel, cfg.baseline)?;
    emit_report(&[Experiment::Forecast(&outcome)], out)?;
    let r = &outcome.report;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    Ok(format!(
        "{} forecast: ACC {:.3}, TPR {}, TNR {} (p = {}), threshold {:.2}",
        cfg.baseline,
        r.acc,
        fmt(r.tpr),
        fmt(r.tnr),
        r.tnr_p_value.map_or("n/a".to_string(), |p| format!("{p:.2e}")),
        outcome.threshold
    ))
}

fn cmd_resample(cfg: &RunConfig, out: &Path) -> Result<String> {
    let (panel, _) = load_panel(cfg)?;
    let basket = cfg.basket.unwrap_or((panel.n_assets() / 2).max(4).min(panel.n_assets()));
    let experiment = match cfg.experiment {
        ExperimentKind::Cluster => ResampleExperiment::Cluster { settings: cluster_settings(cfg) },
        ExperimentKind::Forecast => {
            ResampleExperiment::Forecast { settings: forecast_settings(cfg, cfg.gamma), feature: cfg.baseline }
        }
    };
    let settings = ResampleSettings { resamples: cfg.resamples, basket, seed: cfg.seed, experiment };
    let report = run_resample(&panel, &settings)?;
    emit_report(&[Experiment::Resample(&report)], out)?;
    Ok(format!("{} of {} resampled runs succeeded", report.succeeded, report.succeeded + report.failed))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let (panel, truth) = generate_synthetic(&synthetic_spec(cfg))?;
    panel.to_prices(100.0).write_csv(out.join("prices.csv"))?;
    let file = File::create(out.join("truth.csv")).map_err(|e| IccError::Data(format!("cannot write truth.csv: {e}")))?;
    write_segmentation_csv(BufWriter::new(file), &panel.dates, &truth)?;
    Ok(format!("wrote {} days of {} synthetic tickers", panel.n_obs() + 1, panel.n_assets()))
}
