//! Configuration layering: built-in defaults < `VAI_WORKERS` < config file < flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use vai_core::detector_eval::Thresholds;
use vai_core::index::Weights;
use vai_core::metrics::MetricConfig;
use vai_core::pipeline::RunConfig;
use vai_core::{Error, Result};

pub const WORKERS_ENV: &str = "VAI_WORKERS";

/// Contents of a `--config` TOML file. Every table and key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub metrics: Option<MetricConfig>,
    pub weights: Option<Weights>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub eval: Option<Thresholds>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))
    }
}

/// `--resize` value: a pixel count or `native`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resize(pub Option<usize>);

fn parse_resize(s: &str) -> std::result::Result<Resize, String> {
    if s.eq_ignore_ascii_case("native") {
        return Ok(Resize(None));
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or `native`, got `{s}`")),
        Ok(n) => Ok(Resize(Some(n))),
    }
}

fn parse_weights(s: &str) -> std::result::Result<Weights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let arr: [f64; 7] = parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 7 comma-separated weights, got {}", v.len()))?;
    Ok(Weights(arr))
}

/// Flags shared by `score` and `rank`. Defaults are applied after the config
/// file, so none is given to clap directly.
#[derive(Debug, Clone, Default, Args)]
pub struct TuningArgs {
    /// TOML file with `[metrics]`, `weights`, `workers`, `out_dir`
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory [default: vai-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Metric worker threads [default: $VAI_WORKERS, else logical cores]
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    /// Longest image side before analysis, or `native` [default: 512]
    #[arg(long, value_name = "N|native", value_parser = parse_resize)]
    pub resize: Option<Resize>,
    /// HSV histogram bins per channel [default: 8]
    #[arg(long, value_name = "N")]
    pub hsv_bins: Option<usize>,
    /// LBP histogram bins; only 256 is valid for 8-neighbour codes [default: 256]
    #[arg(long, value_name = "N")]
    pub lbp_bins: Option<usize>,
    /// Entropy log offset [default: 1e-6]
    #[arg(long, value_name = "F")]
    pub entropy_epsilon: Option<f64>,
    /// Gaussian sigma of the sharpness blur [default: 1.0]
    #[arg(long, value_name = "F")]
    pub blur_sigma: Option<f64>,
    /// Sharpness blur kernel size, odd [default: 2*ceil(3*sigma)+1]
    #[arg(long, value_name = "N")]
    pub blur_size: Option<usize>,
    /// Canny pre-smoothing sigma [default: 1.4]
    #[arg(long, value_name = "F")]
    pub canny_sigma: Option<f64>,
    /// Canny weak threshold, fraction of max gradient [default: 0.1]
    #[arg(long, value_name = "F")]
    pub canny_low: Option<f64>,
    /// Canny strong threshold, fraction of max gradient [default: 0.3]
    #[arg(long, value_name = "F")]
    pub canny_high: Option<f64>,
    /// Seven comma-separated index weights in TC,CDC,OC,CR,IS,ISH,IC order [default: 1,1,1,1,1,1,1]
    #[arg(long, value_name = "W,...", value_parser = parse_weights, allow_hyphen_values = true)]
    pub weights: Option<Weights>,
}

fn env_workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Argument(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        _ => Ok(None),
    }
}

impl TuningArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mut cfg = RunConfig {
            workers: env_workers()?,
            ..RunConfig::default()
        };
        if let Some(m) = file.metrics {
            cfg.metrics = m;
        }
        if let Some(w) = file.weights {
            cfg.weights = w;
        }
        if file.workers.is_some() {
            cfg.workers = file.workers;
        }
        if let Some(o) = file.out_dir {
            cfg.out_dir = o;
        }

        let m = &mut cfg.metrics;
        if let Some(Resize(r)) = self.resize {
            m.resize = r;
        }
        if let Some(b) = self.hsv_bins {
            m.hsv_bins = [b; 3];
        }
        if let Some(b) = self.lbp_bins {
            m.lbp_bins = b;
        }
        if let Some(e) = self.entropy_epsilon {
            m.entropy_epsilon = e;
        }
        if let Some(s) = self.blur_sigma {
            m.blur_sigma = s;
        }
        if self.blur_size.is_some() {
            m.blur_size = self.blur_size;
        }
        if let Some(s) = self.canny_sigma {
            m.canny.sigma = s;
        }
        if let Some(l) = self.canny_low {
            m.canny.low = l;
        }
        if let Some(h) = self.canny_high {
            m.canny.high = h;
        }
        if let Some(w) = self.weights {
            cfg.weights = w;
        }
        if let Some(n) = self.workers {
            cfg.workers = Some(n as usize);
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Thresholds for `eval`: default 0.5 < `[eval]` table < `--threshold`.
pub fn resolve_thresholds(config: Option<&Path>, threshold: Option<f64>) -> Result<(Thresholds, Option<PathBuf>)> {
    let file = match config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut t = file.eval.unwrap_or_default();
    if let Some(v) = threshold {
        t.default = v;
        t.per_detector.clear();
    }
    if !t.default.is_finite() || t.per_detector.values().any(|v| !v.is_finite()) {
        return Err(Error::Argument("thresholds must be finite".into()));
    }
    Ok((t, file.out_dir))
}
