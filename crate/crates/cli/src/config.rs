//! Run configuration: command-line flags (or `ICC_*` environment variables)
//! override a flat `key = value` config file, which overrides defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Subcommand, ValueEnum};
use icc_core::experiment::ModelVariant;
use icc_core::forecast::Feature;
use icc_core::{IccError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// Segment a panel into market states.
    Cluster,
    /// Fit on a training split and forecast next-day states on the rest.
    Forecast,
    /// Repeat an experiment over random sub-baskets of tickers.
    Resample,
    /// Write a synthetic two-regime price panel and its true labels.
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Cluster,
    Forecast,
}

/// Flags shared by every subcommand. All are optional so that unset flags
/// fall through to the config file and then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Price CSV: a `date` column followed by one column per ticker.
    #[arg(long, env = "ICC_INPUT")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "ICC_OUT")]
    pub out: Option<PathBuf>,
    /// Use a generated two-regime panel instead of `--input`.
    #[arg(long, env = "ICC_SYNTHETIC")]
    pub synthetic: Option<Option<bool>>,
    /// Assets in the synthetic panel.
    #[arg(long, env = "ICC_N")]
    pub n: Option<usize>,
    /// Days in the synthetic panel.
    #[arg(long = "T", env = "ICC_T")]
    pub t: Option<usize>,
    /// Expected regime length of the synthetic panel, in days.
    #[arg(long, env = "ICC_PERSISTENCE")]
    pub persistence: Option<f64>,
    /// Number of market states.
    #[arg(long = "K", env = "ICC_K")]
    pub k: Option<usize>,
    /// Switching penalty.
    #[arg(long, env = "ICC_GAMMA")]
    pub gamma: Option<f64>,
    /// Comma-separated penalties to grid-search instead of `--gamma`.
    #[arg(long, env = "ICC_GAMMA_GRID", value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    /// Mean segment length the grid search aims for, in days.
    #[arg(long, env = "ICC_TARGET_LENGTH")]
    pub target_length: Option<f64>,
    /// `icc-sparse`, `icc-full`, `icc-sparse-g0`, `icc-full-g0` or `gmm`.
    #[arg(long, env = "ICC_MODEL")]
    pub model: Option<String>,
    /// Rolling window of the log-likelihood ratio, in days.
    #[arg(long, env = "ICC_DELTA")]
    pub delta: Option<usize>,
    /// Forecast horizon, in days.
    #[arg(long, env = "ICC_HORIZON")]
    pub horizon: Option<usize>,
    /// Fraction of days used for training.
    #[arg(long, env = "ICC_SPLIT")]
    pub split: Option<f64>,
    /// Number of resampled baskets.
    #[arg(long, env = "ICC_RESAMPLES")]
    pub resamples: Option<usize>,
    /// Tickers per resampled basket (default: half the panel).
    #[arg(long, env = "ICC_BASKET")]
    pub basket: Option<usize>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, env = "ICC_SEED")]
    pub seed: Option<u64>,
    /// Forecast regressor: `llr` or `fraction-positive`.
    #[arg(long, env = "ICC_BASELINE")]
    pub baseline: Option<String>,
    /// Experiment repeated by `resample`.
    #[arg(long, env = "ICC_EXPERIMENT")]
    pub experiment: Option<ExperimentKind>,
    /// Random initializations per fit.
    #[arg(long, env = "ICC_RESTARTS")]
    pub restarts: Option<usize>,
    /// Iteration cap per fit.
    #[arg(long, env = "ICC_MAX_ITERS")]
    pub max_iters: Option<usize>,
    /// Flat `key = value` file; keys are the long flag names.
    #[arg(long, env = "ICC_CONFIG")]
    pub config: Option<PathBuf>,
}

/// Fully resolved configuration, written to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    pub synthetic: bool,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub persistence: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub gamma_grid: Option<Vec<f64>>,
    pub target_length: f64,
    pub model: ModelVariant,
    pub sparse: bool,
    pub delta: usize,
    pub horizon: usize,
    pub split: f64,
    pub resamples: usize,
    /// `None` until the panel is loaded; then half its width unless set.
    pub basket: Option<usize>,
    pub seed: u64,
    pub baseline: Feature,
    pub experiment: ExperimentKind,
    pub restarts: usize,
    pub max_iters: usize,
}

const KEYS: &[&str] = &[
    "input",
    "out",
    "synthetic",
    "n",
    "T",
    "persistence",
    "K",
    "gamma",
    "gamma-grid",
    "target-length",
    "model",
    "delta",
    "horizon",
    "split",
    "resamples",
    "basket",
    "seed",
    "baseline",
    "experiment",
    "restarts",
    "max-iters",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| IccError::Config(format!("config line {}: expected `key = value`", no + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(IccError::Config(format!("config line {}: unknown key `{key}`", no + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        fs::read_to_string(path).map_err(|e| IccError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

struct Layer {
    file: BTreeMap<String, String>,
}

impl Layer {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse().map_err(|_| IccError::Config(format!("config key `{key}`: cannot parse `{raw}`"))),
            None => Ok(default),
        }
    }

    fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|raw| raw.parse().map_err(|_| IccError::Config(format!("config key `{key}`: cannot parse `{raw}`"))))
            .transpose()
    }
}

fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| IccError::Config(format!("bad gamma grid entry `{s}`"))))
        .collect()
}

fn parse_experiment(raw: &str) -> Result<ExperimentKind> {
    ExperimentKind::from_str(raw, false).map_err(|_| IccError::Config(format!("unknown experiment `{raw}`")))
}

impl RunConfig {
    /// Resolves flags, environment and config file into a full configuration
    /// and the output directory.
    pub fn resolve(command: CommandKind, args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
        let file = match &args.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let l = Layer { file };
        let model: ModelVariant = l.get(args.model.clone(), "model", "icc-sparse".to_string())?.parse()?;
        let baseline: Feature = l.get(args.baseline.clone(), "baseline", "llr".to_string())?.parse()?;
        let gamma_grid = match &args.gamma_grid {
            Some(g) => Some(g.clone()),
            None => l.file.get("gamma-grid").map(|raw| parse_grid(raw)).transpose()?,
        };
        let experiment = match args.experiment {
            Some(e) => e,
            None => l.file.get("experiment").map(|raw| parse_experiment(raw)).transpose()?.unwrap_or(ExperimentKind::Cluster),
        };
        let synthetic = match args.synthetic {
            Some(v) => v.unwrap_or(true),
            None => l.get(None, "synthetic", false)?,
        };
        let out = l.get(args.out.as_ref().map(|p| p.display().to_string()), "out", "icc-out".to_string())?;
        let cfg = RunConfig {
            command,
            input: l.get_opt(args.input.as_ref().map(|p| p.display().to_string()), "input")?.map(PathBuf::from),
            synthetic,
            n: l.get(args.n, "n", 20)?,
            t: l.get(args.t, "T", 2000)?,
            persistence: l.get(args.persistence, "persistence", 100.0)?,
            k: l.get(args.k, "K", 2)?,
            gamma: l.get(args.gamma, "gamma", 16.0)?,
            gamma_grid,
            target_length: l.get(args.target_length, "target-length", icc_core::icc::DEFAULT_TARGET_SEGMENT)?,
            model,
            sparse: model.is_sparse(),
            delta: l.get(args.delta, "delta", icc_core::forecast::DEFAULT_DELTA)?,
            horizon: l.get(args.horizon, "horizon", 1)?,
            split: l.get(args.split, "split", 0.65)?,
            resamples: l.get(args.resamples, "resamples", 100)?,
            basket: l.get_opt(args.basket, "basket")?,
            seed: l.get(args.seed, "seed", 0)?,
            baseline,
            experiment,
            restarts: l.get(args.restarts, "restarts", 10)?,
            max_iters: l.get(args.max_iters, "max-iters", 100)?,
        };
        cfg.validate()?;
        Ok((cfg, PathBuf::from(out)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IccError::Config(msg));
        if self.command != CommandKind::Synth && self.synthetic == self.input.is_some() {
            return bad("give exactly one of --input and --synthetic".into());
        }
        if self.command == CommandKind::Synth && self.input.is_some() {
            return bad("synth does not read --input".into());
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("--gamma must be non-negative, got {}", self.gamma));
        }
        if let Some(grid) = &self.gamma_grid {
            if grid.is_empty() || grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                return bad("--gamma-grid needs non-negative entries".into());
            }
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("--split must lie in (0, 1), got {}", self.split));
        }
        if !(self.persistence >= 1.0) {
            return bad(format!("--persistence must be at least 1, got {}", self.persistence));
        }
        if self.k == 0 || self.n == 0 || self.t == 0 || self.delta == 0 || self.horizon == 0 {
            return bad("--K, --n, --T, --delta and --horizon must be positive".into());
        }
        if self.resamples == 0 || self.restarts == 0 || self.max_iters == 0 {
            return bad("--resamples, --restarts and --max-iters must be positive".into());
        }
        let forecasting = self.command == CommandKind::Forecast
            || (self.command == CommandKind::Resample && self.experiment == ExperimentKind::Forecast);
        if forecasting && (self.k != 2 || matches!(self.model, ModelVariant::Gmm)) {
            return bad("forecasting needs K = 2 and an ICC model".into());
        }
        Ok(())
    }
}
