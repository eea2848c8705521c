//! Flags, the flat config file, and their merge.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mtl_rmt::linalg::log_grid;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mtlrmt", version, about = "Multi-task ridge regression with asymptotic risk prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on a dataset and write the model container.
    Fit(Flags),
    /// Apply a saved model to task files.
    Predict(Flags),
    /// Theoretical and/or empirical risk at one (λ, γ).
    Risk(Flags),
    /// Choose λ from the training data alone.
    Tune(Flags),
    /// Empirical against theoretical risk over a λ grid.
    Sweep(Flags),
    /// Write a synthetic dataset with its manifest and true weights.
    Simulate(Flags),
    /// Estimate the noise variance of a dataset.
    EstimateNoise(Flags),
    /// Cut a multichannel series into per-channel sliding-window tasks.
    TsfPrepare(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Fit(f)
            | Command::Predict(f)
            | Command::Risk(f)
            | Command::Tune(f)
            | Command::Sweep(f)
            | Command::Simulate(f)
            | Command::EstimateNoise(f)
            | Command::TsfPrepare(f) => f,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// One value for every task, or a comma-separated list.
    #[arg(long)]
    pub gamma: Option<String>,
    /// `lo:hi:points,log` or `lo:hi:points,lin`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// risk: theory | empirical | both. tune: grid | closed_form.
    #[arg(long)]
    pub mode: Option<String>,
    /// Flat key/value file supplying defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub split: Option<f64>,
    /// Saved model container (predict).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Single input file (predict) or series CSV (tsf-prepare).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Task index for `--input` (predict).
    #[arg(long)]
    pub task: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GammaValue {
    Scalar(f64),
    List(Vec<f64>),
    Text(String),
}

/// Keys of the config file. Flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub gamma: Option<GammaValue>,
    pub grid: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub lookback: Option<usize>,
    pub horizon: Option<usize>,
    pub stride: Option<usize>,
    pub split: Option<f64>,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub task: Option<usize>,
    // synthetic data
    pub d: Option<usize>,
    pub task_sizes: Option<Vec<usize>>,
    pub q: Option<usize>,
    pub noise_variance: Option<f64>,
    pub alpha: Option<f64>,
    pub distribution: Option<String>,
    pub test_points: Option<usize>,
}

pub fn load_config(path: &Path) -> CliResult<ConfigFile> {
    let text = crate::io::read_text(path)?;
    toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Synthetic generator settings, defaulting to two Gaussian tasks with d = 200 and n_t = 150.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSettings {
    pub d: usize,
    pub task_sizes: Vec<usize>,
    pub q: usize,
    pub noise_variance: f64,
    pub alpha: f64,
    pub distribution: String,
    pub test_points: usize,
}

/// Flags merged over the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub manifest: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub gamma: Option<GammaValue>,
    pub grid: Option<String>,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub lookback: Option<usize>,
    pub horizon: Option<usize>,
    pub stride: usize,
    pub split: Option<f64>,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub task: usize,
    pub synthetic: SyntheticSettings,
}

pub const DEFAULT_GRID: &str = "1e-2:1e2:10,log";

impl Settings {
    pub fn resolve(flags: &Flags) -> CliResult<Self> {
        let cfg = match &flags.config {
            Some(p) => load_config(p)?,
            None => ConfigFile::default(),
        };
        Ok(Settings {
            manifest: flags.manifest.clone().or(cfg.manifest),
            lambda: flags.lambda.or(cfg.lambda),
            gamma: flags.gamma.clone().map(GammaValue::Text).or(cfg.gamma),
            grid: flags.grid.clone().or(cfg.grid),
            trials: flags.trials.or(cfg.trials).unwrap_or(30),
            seed: flags.seed.or(cfg.seed).unwrap_or(0),
            out: flags.out.clone().or(cfg.out),
            mode: flags.mode.clone().or(cfg.mode),
            lookback: flags.lookback.or(cfg.lookback),
            horizon: flags.horizon.or(cfg.horizon),
            stride: flags.stride.or(cfg.stride).unwrap_or(1),
            split: flags.split.or(cfg.split),
            model: flags.model.clone().or(cfg.model),
            input: flags.input.clone().or(cfg.input),
            task: flags.task.or(cfg.task).unwrap_or(0),
            synthetic: SyntheticSettings {
                d: cfg.d.unwrap_or(200),
                task_sizes: cfg.task_sizes.unwrap_or_else(|| vec![150, 150]),
                q: cfg.q.unwrap_or(1),
                noise_variance: cfg.noise_variance.unwrap_or(0.25),
                alpha: cfg.alpha.unwrap_or(0.5),
                distribution: cfg.distribution.unwrap_or_else(|| "gaussian".into()),
                test_points: cfg.test_points.unwrap_or(5000),
            },
        })
    }

    /// Per-task γ; a single value is repeated. Defaults to 1.
    pub fn gammas(&self, tasks: usize) -> CliResult<Vec<f64>> {
        let values = match &self.gamma {
            None => vec![1.0],
            Some(GammaValue::Scalar(g)) => vec![*g],
            Some(GammaValue::List(v)) => v.clone(),
            Some(GammaValue::Text(s)) => parse_list(s)?,
        };
        match values.len() {
            1 => Ok(vec![values[0]; tasks]),
            n if n == tasks => Ok(values),
            n => Err(CliError::input(format!("--gamma has {n} values for {tasks} tasks"))),
        }
    }

    pub fn require_lambda(&self) -> CliResult<f64> {
        self.lambda.ok_or_else(|| CliError::input("--lambda is required"))
    }

    pub fn require_manifest(&self) -> CliResult<&Path> {
        self.manifest.as_deref().ok_or_else(|| CliError::input("--manifest is required"))
    }

    pub fn lambda_grid(&self) -> CliResult<Vec<f64>> {
        parse_grid(self.grid.as_deref().unwrap_or(DEFAULT_GRID))
    }
}

pub fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::input(format!("cannot parse {p:?} as a number"))))
        .collect()
}

/// `lo:hi:points,log` (log-spaced) or `lo:hi:points,lin`; the spacing defaults to log.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::input(format!("grid {s:?} is not lo:hi:points[,log|,lin]"));
    let (range, spacing) = match s.split_once(',') {
        Some((r, sp)) => (r, sp.trim()),
        None => (s, "log"),
    };
    let parts: Vec<&str> = range.split(':').collect();
    let [lo, hi, points] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let points: usize = points.trim().parse().map_err(|_| bad())?;
    if points == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo || lo < 0.0 {
        return Err(bad());
    }
    match spacing {
        "log" if lo > 0.0 => Ok(log_grid(lo, hi, points)),
        "lin" => Ok(if points == 1 {
            vec![lo]
        } else {
            (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
        }),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = parse_grid("1e-2:1e2:5,log").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[2] - 1.0).abs() < 1e-12);
        assert_eq!(parse_grid("0:1:3,lin").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("2:2:1").unwrap(), vec![2.0]);
        for bad in ["0:1:3,log", "1:2", "1:2:0", "2:1:3", "a:b:c", "1:2:3,cubic"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "lambda = 3.0\ngamma = [1.0, 2.0]\ntrials = 4\nd = 10\n").unwrap();
        let flags = Flags { config: Some(p.clone()), lambda: Some(0.5), ..Default::default() };
        let s = Settings::resolve(&flags).unwrap();
        assert_eq!(s.lambda, Some(0.5));
        assert_eq!(s.gammas(2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(s.trials, 4);
        assert_eq!(s.synthetic.d, 10);

        let flags = Flags { config: Some(p), gamma: Some("0.3".into()), ..Default::default() };
        assert_eq!(Settings::resolve(&flags).unwrap().gammas(3).unwrap(), vec![0.3; 3]);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "lamda = 3.0\n").unwrap();
        let e = Settings::resolve(&Flags { config: Some(p), ..Default::default() }).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
