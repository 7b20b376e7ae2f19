//! Local Binary Patterns (8 neighbours, radius 1, raw 256-bin histogram)
//! and the histogram entropy used for texture complexity.

use crate::error::{Error, Result};
use crate::raster::Plane;

/// Number of neighbours sampled per pixel.
pub const LBP_NEIGHBORS: u32 = 8;
/// Histogram bin count for raw 8-neighbour codes.
pub const LBP_BINS: usize = 1 << LBP_NEIGHBORS;
/// Default smoothing constant inside the entropy logarithm.
pub const ENTROPY_EPSILON: f64 = 1e-6;

/// Neighbour offsets `(dx, dy)` in bit order: E, NE, N, NW, W, SW, S, SE
/// (counter-clockwise from east, image y pointing down).
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// LBP codes for the interior of an image (one pixel border removed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpCodeMap {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl LbpCodeMap {
    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} codes for a {width}x{height} map",
                codes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            codes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn code(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }
}

/// Bit `k` is set when neighbour `k` is at least as bright as the centre.
pub fn lbp_code_map(img: &Plane) -> Result<LbpCodeMap> {
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::Dimension(format!(
            "LBP needs at least 3x3, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width() - 2, img.height() - 2);
    let mut codes = Vec::with_capacity(w * h);
    for y in 1..=h {
        for x in 1..=w {
            let center = img.get(x, y);
            let mut code = 0u8;
            for (bit, (dx, dy)) in NEIGHBOR_OFFSETS.iter().enumerate() {
                let g = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                if g >= center {
                    code |= 1 << bit;
                }
            }
            codes.push(code);
        }
    }
    LbpCodeMap::new(w, h, codes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    values: Vec<f64>,
}

impl Histogram {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Argument("histogram values must be >= 0".into()));
        }
        Ok(Self { values })
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Code frequencies divided by the number of interior pixels.
pub fn normalized_histogram(codes: &LbpCodeMap, bins: usize) -> Result<Histogram> {
    if bins != LBP_BINS {
        return Err(Error::Argument(format!(
            "LBP histogram needs {LBP_BINS} bins for {LBP_NEIGHBORS} neighbours, got {bins}"
        )));
    }
    if codes.codes.is_empty() {
        return Err(Error::EmptyInput("LBP code map has no pixels"));
    }
    let mut counts = vec![0usize; bins];
    for &c in &codes.codes {
        counts[c as usize] += 1;
    }
    let total = codes.codes.len() as f64;
    Histogram::new(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// `-sum_k p_k * log2(p_k + epsilon)`, evaluated literally.
///
/// A delta histogram therefore yields a tiny negative value
/// (`-log2(1 + epsilon)`); it is not clamped.
pub fn entropy(h: &Histogram, epsilon: f64) -> Result<f64> {
    let total: f64 = h.values.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "entropy needs a normalized histogram, values sum to {total}"
        )));
    }
    let mut terms: Vec<f64> = h
        .values
        .iter()
        .map(|&p| -p * (p + epsilon).log2())
        .collect();
    // Sorted summation makes the result independent of bin order.
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}
