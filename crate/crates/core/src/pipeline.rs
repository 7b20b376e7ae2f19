//! Manifest ingestion and the parallel scoring run.
//!
//! A coordinator fans manifest rows out to a pool of stateless workers.
//! Results are gathered back into manifest order before any reduction, so
//! the worker count never changes an emitted value.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector_eval::Truth;
use crate::error::{Error, Result};
use crate::index::{self, Cohort, Weights};
use crate::metrics::{compute_all, MetricConfig, MetricVector};
use crate::raster::decode_image;
use crate::report::{AnalysisConfig, CohortRow, ImageRow, ScoreReport, SkippedRow};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: PathBuf,
    /// Identifier used in reports; the path as written in the manifest.
    pub image_id: String,
    pub cohort: String,
    pub label: Option<Truth>,
    /// 1-based source line, 0 for rows built from directory scans.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Reads a `path,cohort,label` CSV. Relative paths resolve against the
    /// manifest's directory; `label` may be empty or absent.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse_csv(&text, base)
    }

    pub fn parse_csv(bytes: &[u8], base: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(bytes);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Manifest { line: 1, message: e.to_string() })?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h.trim_start_matches('\u{feff}') == name);
        let path_col = col("path").ok_or(Error::Manifest {
            line: 1,
            message: "missing column `path`".into(),
        })?;
        let cohort_col = col("cohort").ok_or(Error::Manifest {
            line: 1,
            message: "missing column `cohort`".into(),
        })?;
        let label_col = col("label");

        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Manifest {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let field = |i: usize| rec.get(i).unwrap_or("");
            let raw_path = field(path_col);
            if raw_path.is_empty() {
                return Err(Error::Manifest { line, message: "empty path".into() });
            }
            let cohort = field(cohort_col);
            if cohort.is_empty() {
                return Err(Error::Manifest { line, message: "empty cohort".into() });
            }
            let label = match label_col.map(field).unwrap_or("") {
                "" => None,
                s => Some(Truth::parse(s).ok_or_else(|| Error::Manifest {
                    line,
                    message: format!("label must be `real` or `fake`, got `{s}`"),
                })?),
            };
            let p = Path::new(raw_path);
            rows.push(ManifestRow {
                path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
                image_id: raw_path.to_string(),
                cohort: cohort.to_string(),
                label,
                line,
            });
        }
        Ok(Self { rows })
    }

    /// Builds a manifest from cohort directories; `real` is labelled real,
    /// everything else fake. Files are listed in name order.
    pub fn from_dirs(cohorts: &[(String, PathBuf)], real: Option<&Path>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut push_dir = |cohort: &str, dir: &Path, label: Truth| -> Result<()> {
            if cohort.is_empty() {
                return Err(Error::Argument("cohort name must not be empty".into()));
            }
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && has_image_extension(p))
                .collect();
            files.sort();
            for path in files {
                let image_id = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                rows.push(ManifestRow {
                    path,
                    image_id,
                    cohort: cohort.to_string(),
                    label: Some(label),
                    line: 0,
                });
            }
            Ok(())
        };
        if let Some(dir) = real {
            push_dir("real", dir, Truth::Real)?;
        }
        for (name, dir) in cohorts {
            push_dir(name, dir, Truth::Fake)?;
        }
        Ok(Self { rows })
    }
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Every tunable of a run. `workers` and `out_dir` only affect scheduling
/// and placement; they are not part of the analysis config echoed into
/// reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub metrics: MetricConfig,
    pub weights: Weights,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metrics: MetricConfig::default(),
            weights: Weights::default(),
            workers: None,
            out_dir: PathBuf::from("vai-out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.metrics.validate()?;
        self.weights.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Argument("worker count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig::new(self.metrics.clone(), self.weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub row: ManifestRow,
    pub metrics: MetricVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedImage {
    pub row: ManifestRow,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredRun {
    /// Successfully scored rows, in manifest order.
    pub images: Vec<ScoredImage>,
    pub skipped: Vec<SkippedImage>,
}

fn score_row(row: &ManifestRow, cfg: &MetricConfig) -> std::result::Result<MetricVector, String> {
    let bytes = fs::read(&row.path).map_err(|e| format!("cannot read {}: {e}", row.path.display()))?;
    let img = decode_image(&bytes).map_err(|e| e.to_string())?;
    compute_all(&img, cfg).map_err(|e| e.to_string())
}

/// Scores every manifest row on `workers` threads (all cores when `None`).
/// Unreadable or undecodable rows are skipped with a reason.
pub fn score_manifest(manifest: &Manifest, cfg: &MetricConfig, workers: Option<usize>) -> Result<ScoredRun> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<std::result::Result<MetricVector, String>> = pool.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                let out = score_row(row, cfg);
                match &out {
                    Ok(_) => log::debug!("scored {}", row.path.display()),
                    Err(e) => log::warn!("skipping {}: {e}", row.path.display()),
                }
                out
            })
            .collect()
    });
    let mut run = ScoredRun::default();
    for (row, outcome) in manifest.rows.iter().zip(outcomes) {
        match outcome {
            Ok(metrics) => run.images.push(ScoredImage { row: row.clone(), metrics }),
            Err(reason) => run.skipped.push(SkippedImage { row: row.clone(), reason }),
        }
    }
    Ok(run)
}

/// Pools, scores and ranks the cohorts of a run into a report.
pub fn build_report(run: &ScoredRun, config: &RunConfig, generated_at: &str) -> Result<ScoreReport> {
    let mut report = ScoreReport::empty(config.analysis(), generated_at);
    report.skipped = run
        .skipped
        .iter()
        .map(|s| SkippedRow {
            path: s.row.image_id.clone(),
            cohort: s.row.cohort.clone(),
            reason: s.reason.clone(),
        })
        .collect();
    if run.images.is_empty() {
        return Err(Error::EmptyInput("no readable images in the manifest"));
    }

    // Cohorts in order of first appearance; members in manifest order.
    let mut order: Vec<String> = Vec::new();
    let mut members: BTreeMap<String, Vec<(String, MetricVector)>> = BTreeMap::new();
    for img in &run.images {
        if !members.contains_key(&img.row.cohort) {
            order.push(img.row.cohort.clone());
        }
        members
            .entry(img.row.cohort.clone())
            .or_default()
            .push((img.row.image_id.clone(), img.metrics));
    }
    let cohorts: Vec<Cohort> = order
        .iter()
        .map(|name| Cohort::new(name.clone(), members.remove(name).unwrap_or_default()))
        .collect::<Result<_>>()?;

    let outcome = index::evaluate(&cohorts, &config.weights)?;
    report.pool = Some(outcome.stats.clone());
    report.images = run
        .images
        .iter()
        .map(|img| ImageRow {
            cohort: img.row.cohort.clone(),
            image_id: img.row.image_id.clone(),
            metrics: img.metrics,
            vai_raw: outcome.image_raws[&(img.row.cohort.clone(), img.row.image_id.clone())],
        })
        .collect();
    let sizes: BTreeMap<&str, usize> = cohorts.iter().map(|c| (c.name(), c.members().len())).collect();
    report.cohorts = match &outcome.scaled {
        Ok(scores) => scores
            .iter()
            .map(|s| CohortRow {
                cohort: s.cohort.clone(),
                images: sizes[s.cohort.as_str()],
                raw: s.raw,
                scaled: Some(s.scaled),
                rank: s.rank,
                tied: s.tied,
            })
            .collect(),
        Err(message) => {
            report.warnings.push(format!("{message}; raw scores reported unscaled"));
            let mut rows: Vec<CohortRow> = outcome
                .cohort_raws
                .iter()
                .map(|(name, raw)| CohortRow {
                    cohort: name.clone(),
                    images: sizes[name.as_str()],
                    raw: *raw,
                    scaled: None,
                    rank: 0,
                    tied: false,
                })
                .collect();
            index::assign_ranks(&mut rows, |r| r.raw);
            rows
        }
    };
    if report.cohorts.iter().any(|c| c.tied) {
        let tied: Vec<&str> = report.cohorts.iter().filter(|c| c.tied).map(|c| c.cohort.as_str()).collect();
        report.warnings.push(format!("tied cohort scores: {}", tied.join(", ")));
    }
    if !report.skipped.is_empty() {
        report
            .warnings
            .push(format!("{} manifest rows skipped", report.skipped.len()));
    }
    Ok(report)
}

impl index::Rankable for CohortRow {
    fn name(&self) -> &str {
        &self.cohort
    }

    fn set_rank(&mut self, rank: usize, tied: bool) {
        self.rank = rank;
        self.tied = tied;
    }
}
