//! Detector evaluation: confusion counts, accuracy / recall / precision, and
//! the detector x generator tables built from prediction manifests.
//!
//! The positive class is "fake" (AI-generated). A record is predicted fake
//! when its score is `>= threshold`; hard `real`/`fake` labels pass through.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Real,
    Fake,
}

impl Truth {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Some(Truth::Real),
            "fake" => Some(Truth::Fake),
            _ => None,
        }
    }
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truth::Real => "real",
            Truth::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Score(f64),
    Label(Truth),
}

/// Cohort value marking a real image shared by every generator cell of its
/// detector.
pub const SHARED_COHORT: &str = "*";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    pub truth: Truth,
    pub prediction: Option<Prediction>,
    pub detector: String,
    /// Generator name. Real images with an empty cohort or `*` are shared
    /// across all cohorts of the detector.
    pub cohort: String,
    /// 1-based manifest line, 0 when built in code.
    pub line: usize,
}

impl PredictionRecord {
    pub fn scored(image_id: &str, truth: Truth, score: f64, detector: &str, cohort: &str) -> Self {
        Self {
            image_id: image_id.into(),
            truth,
            prediction: Some(Prediction::Score(score)),
            detector: detector.into(),
            cohort: cohort.into(),
            line: 0,
        }
    }

    pub fn labelled(image_id: &str, truth: Truth, label: Truth, detector: &str, cohort: &str) -> Self {
        Self {
            prediction: Some(Prediction::Label(label)),
            ..Self::scored(image_id, truth, 0.0, detector, cohort)
        }
    }

    fn is_shared_real(&self) -> bool {
        self.truth == Truth::Real && (self.cohort.is_empty() || self.cohort == SHARED_COHORT)
    }

    fn predicts_fake(&self, threshold: f64) -> Result<bool> {
        match self.prediction {
            Some(Prediction::Score(s)) => Ok(s >= threshold),
            Some(Prediction::Label(l)) => Ok(l == Truth::Fake),
            None => Err(Error::Manifest {
                line: self.line,
                message: format!("record `{}` has neither a score nor a label", self.image_id),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(records: &[PredictionRecord], threshold: f64) -> Result<ConfusionMatrix> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Argument(format!(
            "threshold must be in [0, 1], got {threshold}"
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for r in records {
        match (r.truth, r.predicts_fake(threshold)?) {
            (Truth::Fake, true) => cm.tp += 1,
            (Truth::Fake, false) => cm.fn_ += 1,
            (Truth::Real, true) => cm.fp += 1,
            (Truth::Real, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Percentages; `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub acc: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix has no records"));
    }
    let pct = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Ok(EvalMetrics {
        acc: 100.0 * (cm.tp + cm.tn) as f64 / total as f64,
        recall: pct(cm.tp, cm.tp + cm.fn_),
        precision: pct(cm.tp, cm.tp + cm.fp),
    })
}

/// Two decimals, rounded half-up.
pub fn format_percent(value: f64) -> String {
    let cents = (value * 100.0).round() as i64;
    format!("{}.{:02}", cents / 100, cents % 100)
}

pub fn format_optional_percent(value: Option<f64>) -> String {
    value.map(format_percent).unwrap_or_else(|| "n/a".to_string())
}

/// Decision thresholds: a default plus per-detector overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub default: f64,
    pub per_detector: BTreeMap<String, f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            default: 0.5,
            per_detector: BTreeMap::new(),
        }
    }
}

impl Thresholds {
    pub fn uniform(threshold: f64) -> Self {
        Self {
            default: threshold,
            ..Default::default()
        }
    }

    pub fn for_detector(&self, detector: &str) -> f64 {
        self.per_detector.get(detector).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub detector: String,
    pub cohort: String,
    pub threshold: f64,
    pub n_real: u64,
    pub n_fake: u64,
    pub confusion: ConfusionMatrix,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub detectors: Vec<String>,
    pub cohorts: Vec<String>,
    /// Detector-major, cohorts in the order of `cohorts`.
    pub cells: Vec<EvalCell>,
}

impl EvalTable {
    pub fn cell(&self, detector: &str, cohort: &str) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.detector == detector && c.cohort == cohort)
    }

    /// Accuracy per detector (rows) and generator (columns).
    pub fn accuracy_matrix(&self) -> Vec<Vec<f64>> {
        self.detectors
            .iter()
            .map(|d| {
                self.cohorts
                    .iter()
                    .map(|c| self.cell(d, c).map(|cell| cell.metrics.acc).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect()
    }
}

fn check_duplicates(records: &[PredictionRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert((r.detector.as_str(), r.cohort.as_str(), r.image_id.as_str())) {
            return Err(Error::Manifest {
                line: r.line,
                message: format!(
                    "duplicate key (detector `{}`, cohort `{}`, image `{}`)",
                    r.detector, r.cohort, r.image_id
                ),
            });
        }
    }
    Ok(())
}

/// Evaluates every (detector, cohort) cell. Each cell combines the cohort's
/// fake images with the detector's real images (shared or cohort-specific).
/// Empty `detectors` / `cohorts` lists are derived from the records.
pub fn eval_table(
    records: &[PredictionRecord],
    detectors: &[String],
    cohorts: &[String],
    thresholds: &Thresholds,
) -> Result<EvalTable> {
    check_duplicates(records)?;
    let detectors: Vec<String> = if detectors.is_empty() {
        records
            .iter()
            .map(|r| r.detector.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        detectors.to_vec()
    };
    let cohorts: Vec<String> = if cohorts.is_empty() {
        records
            .iter()
            .filter(|r| !r.is_shared_real())
            .map(|r| r.cohort.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        cohorts.to_vec()
    };
    if detectors.is_empty() || cohorts.is_empty() {
        return Err(Error::EmptyInput("no detector/cohort cells to evaluate"));
    }

    let pairs: Vec<(&String, &String)> = detectors
        .iter()
        .flat_map(|d| cohorts.iter().map(move |c| (d, c)))
        .collect();
    let outcomes: Vec<Result<std::result::Result<EvalCell, String>>> = pairs
        .par_iter()
        .map(|&(d, c)| {
            let cell: Vec<PredictionRecord> = records
                .iter()
                .filter(|r| &r.detector == d && (&r.cohort == c || r.is_shared_real()))
                .cloned()
                .collect();
            let n_fake = cell.iter().filter(|r| r.truth == Truth::Fake).count() as u64;
            let n_real = cell.len() as u64 - n_fake;
            if n_fake == 0 {
                let why = if cell.is_empty() { "no records" } else { "no fake records" };
                return Ok(Err(format!("{d}/{c} ({why})")));
            }
            let threshold = thresholds.for_detector(d);
            let confusion = confusion(&cell, threshold)?;
            Ok(Ok(EvalCell {
                detector: d.clone(),
                cohort: c.clone(),
                threshold,
                n_real,
                n_fake,
                metrics: metrics(&confusion)?,
                confusion,
            }))
        })
        .collect();

    let mut cells = Vec::with_capacity(outcomes.len());
    let mut gaps = Vec::new();
    for outcome in outcomes {
        match outcome? {
            Ok(cell) => cells.push(cell),
            Err(gap) => gaps.push(gap),
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Coverage { gaps });
    }
    Ok(EvalTable {
        detectors,
        cohorts,
        cells,
    })
}

pub const PREDICTION_COLUMNS: [&str; 5] = ["image_id", "truth", "score", "detector", "cohort"];

/// Parses a prediction manifest (`image_id,truth,score,detector,cohort`).
/// The score column holds a number in `[0, 1]` or a hard `real`/`fake` label.
pub fn read_predictions(reader: impl Read) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let header_err = |message: String| Error::Manifest { line: 1, message };
    let headers = rdr
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(PREDICTION_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| header_err(format!("missing column `{name}`")))?;
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Manifest {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| row.get(index[i]).unwrap_or("");
        let bad = |message: String| Error::Manifest { line, message };

        let image_id = field(0);
        if image_id.is_empty() {
            return Err(bad("empty image_id".into()));
        }
        let truth = Truth::parse(field(1))
            .ok_or_else(|| bad(format!("truth must be `real` or `fake`, got `{}`", field(1))))?;
        let raw_score = field(2);
        let prediction = if raw_score.is_empty() {
            return Err(bad(format!("record `{image_id}` has neither a score nor a label")));
        } else if let Some(label) = Truth::parse(raw_score) {
            Prediction::Label(label)
        } else {
            let s: f64 = raw_score
                .parse()
                .map_err(|_| bad(format!("score `{raw_score}` is not a number or label")))?;
            if !(0.0..=1.0).contains(&s) {
                return Err(bad(format!("score {s} outside [0, 1]")));
            }
            Prediction::Score(s)
        };
        let detector = field(3);
        if detector.is_empty() {
            return Err(bad("empty detector".into()));
        }
        out.push(PredictionRecord {
            image_id: image_id.into(),
            truth,
            prediction: Some(prediction),
            detector: detector.into(),
            cohort: field(4).into(),
            line,
        });
    }
    Ok(out)
}

pub const EVAL_COLUMNS: [&str; 12] = [
    "detector", "cohort", "threshold", "n_real", "n_fake", "tp", "fp", "tn", "fn", "acc", "recall",
    "precision",
];

/// One emitted row of `eval.csv`, as text-level values.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub detector: String,
    pub cohort: String,
    pub threshold: f64,
    pub n_real: u64,
    pub n_fake: u64,
    pub confusion: ConfusionMatrix,
    pub acc: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

fn csv_error(e: impl fmt::Display) -> Error {
    Error::Contract(format!("CSV emission failed: {e}"))
}

pub fn write_eval_csv(table: &EvalTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_COLUMNS).map_err(csv_error)?;
    for c in &table.cells {
        let cm = &c.confusion;
        w.write_record([
            c.detector.clone(),
            c.cohort.clone(),
            c.threshold.to_string(),
            c.n_real.to_string(),
            c.n_fake.to_string(),
            cm.tp.to_string(),
            cm.fp.to_string(),
            cm.tn.to_string(),
            cm.fn_.to_string(),
            format_percent(c.metrics.acc),
            format_optional_percent(c.metrics.recall),
            format_optional_percent(c.metrics.precision),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// Accuracy heat-map data: one row per detector, one column per generator.
pub fn write_accuracy_matrix_csv(table: &EvalTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["detector".to_string()];
    header.extend(table.cohorts.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (d, row) in table.detectors.iter().zip(table.accuracy_matrix()) {
        let mut rec = vec![d.clone()];
        rec.extend(row.into_iter().map(|a| {
            if a.is_nan() {
                "n/a".to_string()
            } else {
                format_percent(a)
            }
        }));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

pub fn read_eval_csv(reader: impl Read) -> Result<Vec<EvalRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Manifest {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |what: &str| Error::Manifest {
            line,
            message: format!("bad `{what}` field"),
        };
        let num = |i: usize| -> Result<u64> { rec[i].parse().map_err(|_| bad(EVAL_COLUMNS[i])) };
        let pct = |i: usize| -> Result<Option<f64>> {
            match &rec[i] {
                "n/a" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(EVAL_COLUMNS[i])),
            }
        };
        if rec.len() != EVAL_COLUMNS.len() {
            return Err(bad("row length"));
        }
        rows.push(EvalRow {
            detector: rec[0].to_string(),
            cohort: rec[1].to_string(),
            threshold: rec[2].parse().map_err(|_| bad("threshold"))?,
            n_real: num(3)?,
            n_fake: num(4)?,
            confusion: ConfusionMatrix {
                tp: num(5)?,
                fp: num(6)?,
                tn: num(7)?,
                fn_: num(8)?,
            },
            acc: pct(9)?.ok_or_else(|| bad("acc"))?,
            recall: pct(10)?,
            precision: pct(11)?,
        });
    }
    Ok(rows)
}

/// Rebuilds a table from parsed rows (values as emitted, i.e. rounded).
pub fn table_from_rows(rows: &[EvalRow]) -> EvalTable {
    let mut detectors = Vec::new();
    let mut cohorts = Vec::new();
    for r in rows {
        if !detectors.contains(&r.detector) {
            detectors.push(r.detector.clone());
        }
        if !cohorts.contains(&r.cohort) {
            cohorts.push(r.cohort.clone());
        }
    }
    EvalTable {
        detectors,
        cohorts,
        cells: rows
            .iter()
            .map(|r| EvalCell {
                detector: r.detector.clone(),
                cohort: r.cohort.clone(),
                threshold: r.threshold,
                n_real: r.n_real,
                n_fake: r.n_fake,
                confusion: r.confusion,
                metrics: EvalMetrics {
                    acc: r.acc,
                    recall: r.recall,
                    precision: r.precision,
                },
            })
            .collect(),
    }
}
