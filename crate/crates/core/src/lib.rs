//! Visual AI Index: seven low-level image metrics aggregated into a
//! `[0, 100]` cohort score, cohort ranking, and detector evaluation
//! (accuracy / recall / precision) from prediction manifests.
//!
//! The pipeline is `raster` (decode, convert, resize) → `filters` and
//! `texture` (from-scratch convolution, Canny, LBP) → `metrics` (one
//! [`MetricVector`] per image) → `index` (pool normalisation, scoring,
//! ranking) → `report` (JSON/CSV/SVG/PNG artifacts). `pipeline` drives the
//! parallel per-image stage; `detector_eval` is independent of the rest.

pub mod detector_eval;
pub mod error;
pub mod filters;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod stats;
pub mod texture;

pub use error::{Error, Result};
pub use metrics::{compute_all, MetricConfig, MetricVector};
pub use raster::{GrayBuffer, HsvBuffer, PixelBuffer, Plane};
