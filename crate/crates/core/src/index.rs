//! Pool normalisation, the index summation, `[0, 100]` scaling and ranking.
//!
//! The index is `100 * sum_j w_j * (x_j - L_j) / (1 - mu_j)` where `x_j` is
//! a metric after per-metric min-max normalisation over the pooled images of
//! a run, `L_j` is the pooled minimum of the normalised values and `mu_j`
//! their pooled mean. Normalising first keeps every denominator positive.
//! Cohort scores are the mean of their members' raw scores, and a run's
//! cohort scores are finally min-max scaled to `[0, 100]`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricVector, METRIC_NAMES, TEXTURE_INDEX};
use crate::stats;
use crate::texture::LBP_BINS;

const DEGENERATE_MEAN: f64 = 1.0 - 1e-9;

/// A named set of scored images (one generator, or the real set).
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    name: String,
    members: Vec<(String, MetricVector)>,
}

impl Cohort {
    pub fn new(name: impl Into<String>, members: Vec<(String, MetricVector)>) -> Result<Self> {
        let name = name.into();
        if members.is_empty() {
            return Err(Error::EmptyInput("cohort has no images"));
        }
        let mut seen = BTreeSet::new();
        for (id, _) in &members {
            if !seen.insert(id.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate image id `{id}` in cohort `{name}`"
                )));
            }
        }
        Ok(Self { name, members })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[(String, MetricVector)] {
        &self.members
    }
}

/// Cohort members with metrics normalised against the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCohort {
    pub name: String,
    pub members: Vec<(String, [f64; 7])>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoolStats {
    /// Range of the metric before normalisation (texture already divided by
    /// `log2(bins)`).
    pub raw_min: f64,
    pub raw_max: f64,
    /// Lower bound `L_j` on the normalised scale.
    pub pool_min: f64,
    pub pool_max: f64,
    /// Mean `mu_j` on the normalised scale.
    pub pool_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub metrics: [MetricPoolStats; 7],
}

/// Per-metric weights; the default weighs every metric equally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(pub [f64; 7]);

impl Default for Weights {
    fn default() -> Self {
        Self([1.0; 7])
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Argument(format!(
                "weights must be finite and >= 0, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

fn prepared(v: &MetricVector) -> [f64; 7] {
    let mut a = v.to_array();
    a[TEXTURE_INDEX] /= (LBP_BINS as f64).log2();
    a
}

/// Min-max normalises each metric over the union of all cohorts. A metric
/// that is constant over the pool maps to 0.5.
pub fn pool_normalize(cohorts: &[Cohort]) -> Result<(Vec<NormalizedCohort>, CohortStats)> {
    let pooled: Vec<[f64; 7]> = cohorts
        .iter()
        .flat_map(|c| c.members.iter().map(|(_, v)| prepared(v)))
        .collect();
    if pooled.is_empty() {
        return Err(Error::EmptyInput("no images in the pool"));
    }

    let mut ranges = [(0.0, 0.0); 7];
    for (j, range) in ranges.iter_mut().enumerate() {
        let (lo, hi) = pooled
            .iter()
            .map(|v| v[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
        *range = (lo, hi);
    }
    let normalize = |v: [f64; 7]| -> [f64; 7] {
        let mut out = [0.0; 7];
        for j in 0..7 {
            let (lo, hi) = ranges[j];
            out[j] = if hi > lo { (v[j] - lo) / (hi - lo) } else { 0.5 };
        }
        out
    };

    let normalized: Vec<NormalizedCohort> = cohorts
        .iter()
        .map(|c| NormalizedCohort {
            name: c.name.clone(),
            members: c
                .members
                .iter()
                .map(|(id, v)| (id.clone(), normalize(prepared(v))))
                .collect(),
        })
        .collect();

    let mut metrics = [MetricPoolStats {
        raw_min: 0.0,
        raw_max: 0.0,
        pool_min: 0.0,
        pool_max: 0.0,
        pool_mean: 0.0,
    }; 7];
    for (j, m) in metrics.iter_mut().enumerate() {
        let column: Vec<f64> = normalized
            .iter()
            .flat_map(|c| c.members.iter().map(move |(_, v)| v[j]))
            .collect();
        let (lo, hi) = column
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        *m = MetricPoolStats {
            raw_min: ranges[j].0,
            raw_max: ranges[j].1,
            pool_min: lo,
            pool_max: hi,
            pool_mean: stats::mean(&column).expect("pool is non-empty"),
        };
    }
    Ok((normalized, CohortStats { metrics }))
}

/// Unweighted index of one normalised metric vector.
pub fn vai_raw(v: &[f64; 7], stats: &CohortStats) -> Result<f64> {
    vai_raw_weighted(v, stats, &Weights::default())
}

pub fn vai_raw_weighted(v: &[f64; 7], stats: &CohortStats, weights: &Weights) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..7 {
        let m = &stats.metrics[j];
        if m.pool_mean >= DEGENERATE_MEAN {
            return Err(Error::DegeneratePool {
                metric: METRIC_NAMES[j],
                mean: m.pool_mean,
            });
        }
        total += weights.0[j] * (v[j] - m.pool_min) / (1.0 - m.pool_mean);
    }
    Ok(100.0 * total)
}

/// Mean of the members' raw scores, reduced in image-id order.
pub fn cohort_raw(cohort: &NormalizedCohort, stats: &CohortStats, weights: &Weights) -> Result<f64> {
    if cohort.members.is_empty() {
        return Err(Error::EmptyInput("cohort has no images"));
    }
    let mut members: Vec<&(String, [f64; 7])> = cohort.members.iter().collect();
    members.sort_by(|a, b| a.0.cmp(&b.0));
    let mut sum = 0.0;
    for (_, v) in members {
        sum += vai_raw_weighted(v, stats, weights)?;
    }
    Ok(sum / cohort.members.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaiScore {
    pub cohort: String,
    pub raw: f64,
    pub scaled: f64,
    pub rank: usize,
    /// Another cohort shares this rank.
    pub tied: bool,
}

/// Min-max scales raw cohort scores to `[0, 100]` and ranks them
/// descending. Tied raws share the better rank; display order breaks ties
/// by cohort name.
pub fn scale_scores(raws: &[(String, f64)]) -> Result<Vec<VaiScore>> {
    if raws.is_empty() {
        return Err(Error::EmptyInput("no cohort scores to scale"));
    }
    let lo = raws.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = raws.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateScaling {
            raws: raws.to_vec(),
        });
    }
    let mut scores: Vec<VaiScore> = raws
        .iter()
        .map(|(name, raw)| VaiScore {
            cohort: name.clone(),
            raw: *raw,
            scaled: (100.0 * ((raw - lo) / (hi - lo))).clamp(0.0, 100.0),
            rank: 0,
            tied: false,
        })
        .collect();
    assign_ranks(&mut scores, |s| s.raw);
    Ok(scores)
}

/// Sorts descending by `key` (name as tiebreak) and assigns competition ranks.
pub(crate) fn assign_ranks<T: Rankable>(items: &mut [T], key: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.name().cmp(b.name())));
    let mut i = 0;
    while i < items.len() {
        let mut j = i + 1;
        while j < items.len() && key(&items[j]) == key(&items[i]) {
            j += 1;
        }
        let tied = j - i > 1;
        for item in &mut items[i..j] {
            item.set_rank(i + 1, tied);
        }
        i = j;
    }
}

pub(crate) trait Rankable {
    fn name(&self) -> &str;
    fn set_rank(&mut self, rank: usize, tied: bool);
}

impl Rankable for VaiScore {
    fn name(&self) -> &str {
        &self.cohort
    }

    fn set_rank(&mut self, rank: usize, tied: bool) {
        self.rank = rank;
        self.tied = tied;
    }
}

/// Everything the index stage produces for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexOutcome {
    pub stats: CohortStats,
    /// Per-image raw scores keyed by `(cohort, image id)`.
    pub image_raws: BTreeMap<(String, String), f64>,
    /// Raw cohort scores in input order.
    pub cohort_raws: Vec<(String, f64)>,
    /// Scaled scores, or the degenerate-scaling error when fewer than two
    /// distinct raw scores exist.
    pub scaled: Result<Vec<VaiScore>, String>,
}

pub fn evaluate(cohorts: &[Cohort], weights: &Weights) -> Result<IndexOutcome> {
    weights.validate()?;
    let mut names = BTreeSet::new();
    for c in cohorts {
        if !names.insert(c.name()) {
            return Err(Error::Argument(format!("duplicate cohort `{}`", c.name())));
        }
    }
    let (normalized, stats) = pool_normalize(cohorts)?;
    let mut image_raws = BTreeMap::new();
    let mut cohort_raws = Vec::with_capacity(normalized.len());
    for c in &normalized {
        for (id, v) in &c.members {
            image_raws.insert((c.name.clone(), id.clone()), vai_raw_weighted(v, &stats, weights)?);
        }
        cohort_raws.push((c.name.clone(), cohort_raw(c, &stats, weights)?));
    }
    let scaled = scale_scores(&cohort_raws).map_err(|e| e.to_string());
    Ok(IndexOutcome {
        stats,
        image_raws,
        cohort_raws,
        scaled,
    })
}
