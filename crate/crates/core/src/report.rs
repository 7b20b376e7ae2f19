//! Report artifacts: the score report (JSON + CSV), the pairwise scatter
//! matrix SVG and LBP renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{CohortStats, Weights};
use crate::metrics::{MetricConfig, MetricVector, METRIC_ABBREVIATIONS, OBJECT_COHERENCE_INDEX};
use crate::raster::{PixelBuffer, Plane};
use crate::texture;

pub const TOOL_NAME: &str = "vai";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The effective analysis configuration, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub metrics: MetricConfig,
    pub weights: Weights,
    /// Statistic conventions that are not tunable but affect values.
    pub conventions: Conventions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub variance: String,
    pub canny_thresholds: String,
    pub normalization: String,
    pub grayscale: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            variance: "population".into(),
            canny_thresholds: "relative to max gradient magnitude".into(),
            normalization: "per-metric min-max over the pooled run".into(),
            grayscale: "BT.601 luma".into(),
        }
    }
}

impl AnalysisConfig {
    pub fn new(metrics: MetricConfig, weights: Weights) -> Self {
        Self {
            metrics,
            weights,
            conventions: Conventions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub cohort: String,
    pub image_id: String,
    pub metrics: MetricVector,
    pub vai_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub cohort: String,
    pub images: usize,
    pub raw: f64,
    /// `None` when scaling was degenerate (fewer than two distinct raws).
    pub scaled: Option<f64>,
    pub rank: usize,
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub path: String,
    pub cohort: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tool: String,
    pub version: String,
    pub generated_at: String,
    pub config: AnalysisConfig,
    pub pool: Option<CohortStats>,
    pub images: Vec<ImageRow>,
    pub cohorts: Vec<CohortRow>,
    pub skipped: Vec<SkippedRow>,
    pub warnings: Vec<String>,
}

impl ScoreReport {
    pub fn empty(config: AnalysisConfig, generated_at: impl Into<String>) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            generated_at: generated_at.into(),
            config,
            pool: None,
            images: Vec::new(),
            cohorts: Vec::new(),
            skipped: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.cohorts {
            if let Some(s) = c.scaled {
                if !(0.0..=100.0).contains(&s) {
                    return Err(Error::Contract(format!(
                        "scaled score {s} of `{}` outside [0, 100]",
                        c.cohort
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pretty JSON with lexicographically sorted keys and a trailing newline.
pub fn emit_json(report: &ScoreReport) -> Result<Vec<u8>> {
    report.validate()?;
    // serde_json's default map is ordered, so going through `Value` sorts keys.
    let value = serde_json::to_value(report)?;
    let mut out = serde_json::to_vec_pretty(&value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn parse_json(bytes: &[u8]) -> Result<ScoreReport> {
    Ok(serde_json::from_slice(bytes)?)
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Contract(format!("CSV emission failed: {e}"))
}

/// Cohort ranking table (`scores.csv`).
pub fn emit_csv(report: &ScoreReport) -> Result<Vec<u8>> {
    report.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "cohort", "images", "raw", "scaled", "tied"])
        .map_err(csv_error)?;
    for c in &report.cohorts {
        w.write_record([
            c.rank.to_string(),
            c.cohort.clone(),
            c.images.to_string(),
            c.raw.to_string(),
            c.scaled.map(|s| s.to_string()).unwrap_or_default(),
            c.tied.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.into_inner().map_err(csv_error)
}

/// Per-image metric table (`metrics.csv`).
pub fn emit_metrics_csv(report: &ScoreReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cohort", "image_id"];
    header.extend(METRIC_ABBREVIATIONS);
    header.push("vai_raw");
    w.write_record(&header).map_err(csv_error)?;
    for row in &report.images {
        let mut rec = vec![row.cohort.clone(), row.image_id.clone()];
        rec.extend(row.metrics.to_array().iter().map(|v| v.to_string()));
        rec.push(row.vai_raw.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.into_inner().map_err(csv_error)
}

/// Inputs for the 7x7 pairwise scatter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrixSpec {
    pub labels: [String; 7],
    pub points: Vec<[f64; 7]>,
    /// Metric whose quantile colours the points.
    pub color_metric: usize,
}

impl ScatterMatrixSpec {
    pub fn new(points: Vec<[f64; 7]>) -> Self {
        Self {
            labels: METRIC_ABBREVIATIONS.map(String::from),
            points,
            color_metric: OBJECT_COHERENCE_INDEX,
        }
    }

    pub fn from_report(report: &ScoreReport) -> Self {
        Self::new(report.images.iter().map(|r| r.metrics.to_array()).collect())
    }
}

/// Per-metric plotting range: data min/max padded by 5% of the span.
pub fn axis_ranges(points: &[[f64; 7]]) -> [(f64, f64); 7] {
    std::array::from_fn(|j| {
        let lo = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pad = if span > 0.0 {
            0.05 * span
        } else if lo != 0.0 {
            0.05 * lo.abs()
        } else {
            0.05
        };
        (lo - pad, hi + pad)
    })
}

const PANEL: f64 = 110.0;
const GAP: f64 = 8.0;
const MARGIN: f64 = 48.0;
const HIST_BINS: usize = 10;
const PALETTE: [&str; 5] = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"];

/// Colour bucket per point from the rank of its colour-metric value.
fn quantile_buckets(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut bucket = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        bucket[i] = if n == 1 { 0 } else { rank * PALETTE.len() / n };
    }
    bucket
}

pub fn scatter_matrix_svg(spec: &ScatterMatrixSpec) -> Result<Vec<u8>> {
    if spec.points.is_empty() {
        return Err(Error::EmptyInput("scatter matrix needs at least one point"));
    }
    let ranges = axis_ranges(&spec.points);
    let colors = quantile_buckets(
        &spec
            .points
            .iter()
            .map(|p| p[spec.color_metric])
            .collect::<Vec<_>>(),
    );
    let side = 2.0 * MARGIN + 7.0 * PANEL + 6.0 * GAP;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (j, (lo, hi)) in ranges.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<g class="axis" data-metric="{}" data-min="{lo}" data-max="{hi}"/>"#,
            xml_escape(&spec.labels[j])
        );
    }
    let project = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
    for row in 0..7 {
        for col in 0..7 {
            let x0 = MARGIN + col as f64 * (PANEL + GAP);
            let y0 = MARGIN + row as f64 * (PANEL + GAP);
            let _ = writeln!(
                s,
                r#"<g class="panel" data-row="{}" data-col="{}" transform="translate({x0},{y0})">"#,
                xml_escape(&spec.labels[row]),
                xml_escape(&spec.labels[col])
            );
            let _ = writeln!(
                s,
                r##"<rect class="frame" width="{PANEL}" height="{PANEL}" fill="none" stroke="#999999"/>"##
            );
            if row == col {
                let mut counts = [0usize; HIST_BINS];
                for p in &spec.points {
                    let t = project(p[col], ranges[col]);
                    counts[((t * HIST_BINS as f64) as usize).min(HIST_BINS - 1)] += 1;
                }
                let tallest = *counts.iter().max().unwrap_or(&1) as f64;
                let bw = PANEL / HIST_BINS as f64;
                for (b, &c) in counts.iter().enumerate() {
                    if c == 0 {
                        continue;
                    }
                    let h = PANEL * 0.9 * c as f64 / tallest;
                    let _ = writeln!(
                        s,
                        r##"<rect class="bar" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#777777" data-count="{c}"/>"##,
                        b as f64 * bw,
                        PANEL - h,
                        bw,
                        h
                    );
                }
            } else {
                for (p, &bucket) in spec.points.iter().zip(&colors) {
                    let cx = PANEL * project(p[col], ranges[col]);
                    let cy = PANEL * (1.0 - project(p[row], ranges[row]));
                    let _ = writeln!(
                        s,
                        r#"<circle class="pt" cx="{cx:.3}" cy="{cy:.3}" r="1.8" fill="{}"/>"#,
                        PALETTE[bucket]
                    );
                }
            }
            s.push_str("</g>\n");
        }
    }
    for (i, label) in spec.labels.iter().enumerate() {
        let c = MARGIN + i as f64 * (PANEL + GAP) + PANEL / 2.0;
        let label = xml_escape(label);
        let _ = writeln!(
            s,
            r#"<text class="label" x="{c}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            side - MARGIN / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text class="label" x="{:.1}" y="{c}" text-anchor="middle" transform="rotate(-90 {:.1} {c})">{label}</text>"#,
            MARGIN / 2.0,
            MARGIN / 2.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{:.1}">colour: {} quantile</text>"#,
        MARGIN / 2.0,
        xml_escape(&spec.labels[spec.color_metric])
    );
    s.push_str("</svg>\n");
    Ok(s.into_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// LBP code map as an 8-bit grayscale raster (code value = pixel value).
pub fn lbp_visualization(img: &Plane) -> Result<PixelBuffer> {
    let codes = texture::lbp_code_map(img)?;
    PixelBuffer::new(codes.width(), codes.height(), 1, codes.codes().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{MetricPoolStats, VaiScore};
    use crate::raster::GrayBuffer;

    fn sample_report() -> ScoreReport {
        let mut r = ScoreReport::empty(
            AnalysisConfig::new(MetricConfig::default(), Weights::default()),
            "1970-01-01T00:00:00Z",
        );
        r.images.push(ImageRow {
            cohort: "a".into(),
            image_id: "x.png".into(),
            metrics: MetricVector::from_array([7.1, 0.04, 0.02, 0.3, 0.9, 0.4, 0.21]),
            vai_raw: 123.456,
        });
        r.pool = Some(CohortStats {
            metrics: [MetricPoolStats {
                raw_min: 0.1,
                raw_max: 0.2,
                pool_min: 0.5,
                pool_max: 0.5,
                pool_mean: 0.5,
            }; 7],
        });
        let s = VaiScore { cohort: "a".into(), raw: 123.456, scaled: 100.0, rank: 1, tied: false };
        r.cohorts.push(CohortRow {
            cohort: s.cohort,
            images: 1,
            raw: s.raw,
            scaled: Some(s.scaled),
            rank: s.rank,
            tied: s.tied,
        });
        r
    }

    #[test]
    fn json_is_deterministic_and_a_fixpoint() {
        let r = sample_report();
        let a = emit_json(&r).unwrap();
        assert_eq!(a, emit_json(&r).unwrap());
        assert_eq!(*a.last().unwrap(), b'\n');
        let parsed = parse_json(&a).unwrap();
        assert_eq!(parsed, r);
        assert_eq!(emit_json(&parsed).unwrap(), a);
    }

    #[test]
    fn json_keys_are_sorted() {
        let text = String::from_utf8(emit_json(&sample_report()).unwrap()).unwrap();
        let top: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("  \"") )
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = top.clone();
        sorted.sort();
        assert_eq!(top, sorted);
    }

    #[test]
    fn empty_report_is_valid() {
        let r = ScoreReport::empty(AnalysisConfig::new(MetricConfig::default(), Weights::default()), "t");
        let json = emit_json(&r).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["cohorts"], serde_json::json!([]));
        assert_eq!(v["images"], serde_json::json!([]));
        assert_eq!(emit_csv(&r).unwrap(), b"rank,cohort,images,raw,scaled,tied\n");
    }

    #[test]
    fn out_of_range_scaled_score_is_rejected() {
        let mut r = sample_report();
        r.cohorts[0].scaled = Some(100.5);
        assert!(emit_json(&r).is_err());
    }

    #[test]
    fn csv_tables() {
        let r = sample_report();
        assert_eq!(
            String::from_utf8(emit_csv(&r).unwrap()).unwrap(),
            "rank,cohort,images,raw,scaled,tied\n1,a,1,123.456,100,false\n"
        );
        assert_eq!(
            String::from_utf8(emit_metrics_csv(&r).unwrap()).unwrap(),
            "cohort,image_id,TC,CDC,OC,CR,IS,ISH,IC,vai_raw\na,x.png,7.1,0.04,0.02,0.3,0.9,0.4,0.21,123.456\n"
        );
    }

    #[test]
    fn single_point_scatter() {
        let svg = scatter_matrix_svg(&ScatterMatrixSpec::new(vec![[1.0, 2.0, 3.0, 0.0, 5.0, 6.0, 7.0]])).unwrap();
        let text = String::from_utf8(svg).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let panels: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("panel")).collect();
        assert_eq!(panels.len(), 49);
        let mut bars = 0;
        let mut dots = 0;
        for p in &panels {
            let nb = p.children().filter(|c| c.attribute("class") == Some("bar")).count();
            let nd = p.children().filter(|c| c.attribute("class") == Some("pt")).count();
            if p.attribute("data-row") == p.attribute("data-col") {
                assert_eq!((nb, nd), (1, 0));
            } else {
                assert_eq!((nb, nd), (0, 1));
            }
            bars += nb;
            dots += nd;
        }
        assert_eq!((bars, dots), (7, 42));
    }

    #[test]
    fn empty_scatter_is_rejected() {
        assert!(matches!(
            scatter_matrix_svg(&ScatterMatrixSpec::new(vec![])),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn lbp_rendering() {
        let flat = GrayBuffer::constant(6, 5, 0.4);
        let out = lbp_visualization(&flat).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (4, 3, 1));
        assert!(out.samples().iter().all(|&v| v == 255));

        let patch = GrayBuffer::from_fn(3, 3, |x, y| [[4.0, 3.0, 4.0], [2.0, 4.0, 5.0], [1.0, 2.0, 3.0]][y][x] / 8.0);
        assert_eq!(lbp_visualization(&patch).unwrap().samples(), &[11]);
    }
}
