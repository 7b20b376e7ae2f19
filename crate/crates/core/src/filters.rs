//! Direct 2D correlation and the filter pipelines built on it: Gaussian
//! blur, Sobel gradients, the 4-neighbour Laplacian and Canny edges.
//!
//! Mirrored kernel taps are always summed as pairs (`w[-d]*a + w[+d]*b`)
//! so that filtering a horizontally flipped image yields the bit-exact
//! mirror of the original response when the kernel is symmetric.

use crate::error::{Error, Result};
use crate::raster::Plane;

/// Square correlation kernel of odd size.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::Argument(format!("kernel size {size} is not odd")));
        }
        if weights.len() != size * size {
            return Err(Error::Dimension(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn center(&self) -> f64 {
        let c = self.size / 2;
        self.weight(c, c)
    }
}

/// Kernel side length for a Gaussian of the given sigma: `2*ceil(3*sigma)+1`.
pub fn gaussian_size(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil() as usize + 1
}

/// Sampled 2D Gaussian normalised to unit sum.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Kernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    if size % 2 == 0 {
        return Err(Error::Argument(format!("gaussian size {size} is not odd")));
    }
    let half = (size / 2) as f64;
    let two_var = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..size * size)
        .map(|i| {
            let dy = (i / size) as f64 - half;
            let dx = (i % size) as f64 - half;
            (-(dx * dx + dy * dy) / two_var).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Kernel::new(size, raw.into_iter().map(|w| w / total).collect())
}

/// Valid-region correlation; the output shrinks by `size - 1` per axis.
pub fn convolve_valid(img: &Plane, k: &Kernel) -> Result<Plane> {
    let s = k.size;
    if img.width() < s || img.height() < s {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than the {s}x{s} kernel",
            img.width(),
            img.height()
        )));
    }
    let (ow, oh) = (img.width() - s + 1, img.height() - s + 1);
    let half = s / 2;
    let src = img.data();
    let stride = img.width();
    let mut rows = vec![0.0; s];
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            for (r, acc) in rows.iter_mut().enumerate() {
                let line = &src[(y + r) * stride + x..(y + r) * stride + x + s];
                let w = &k.weights[r * s..(r + 1) * s];
                let mut sum = w[half] * line[half];
                for d in 1..=half {
                    sum += w[half - d] * line[half - d] + w[half + d] * line[half + d];
                }
                *acc = sum;
            }
            let mut total = rows[half];
            for d in 1..=half {
                total += rows[half - d] + rows[half + d];
            }
            out.push(total);
        }
    }
    Plane::new(ow, oh, out)
}

/// Extends the plane by `margin` pixels on every side, repeating edge samples.
pub fn pad_replicate(img: &Plane, margin: usize) -> Plane {
    let m = margin as isize;
    Plane::from_fn(img.width() + 2 * margin, img.height() + 2 * margin, |x, y| {
        img.get_clamped(x as isize - m, y as isize - m)
    })
}

/// Same-size correlation with replicate padding.
pub fn convolve_replicate(img: &Plane, k: &Kernel) -> Plane {
    convolve_valid(&pad_replicate(img, k.size / 2), k)
        .expect("padded plane always covers the kernel")
}

/// Sobel derivatives over the valid interior.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(gx, gy)| (gx * gx + gy * gy).sqrt())
            .collect()
    }
}

fn require_min_size(img: &Plane, min: usize, what: &str) -> Result<()> {
    if img.width() < min || img.height() < min {
        return Err(Error::Dimension(format!(
            "{what} needs at least {min}x{min}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// `gx` from `[[-1,0,1],[-2,0,2],[-1,0,1]]`, `gy` from its transpose.
pub fn sobel_gradients(img: &Plane) -> Result<GradientField> {
    require_min_size(img, 3, "sobel")?;
    let (w, h) = (img.width() - 2, img.height() - 2);
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = |dx: usize, dy: usize| img.get(x + dx, y + dy);
            let right = (p(2, 0) + p(2, 2)) + 2.0 * p(2, 1);
            let left = (p(0, 0) + p(0, 2)) + 2.0 * p(0, 1);
            let bottom = (p(0, 2) + p(2, 2)) + 2.0 * p(1, 2);
            let top = (p(0, 0) + p(2, 0)) + 2.0 * p(1, 0);
            gx.push(right - left);
            gy.push(bottom - top);
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
    })
}

/// 4-neighbour Laplacian with replicate padding; same size as the input.
pub fn laplacian(img: &Plane) -> Result<Plane> {
    require_min_size(img, 3, "laplacian")?;
    Ok(Plane::from_fn(img.width(), img.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let vertical = img.get_clamped(x, y - 1) + img.get_clamped(x, y + 1);
        let horizontal = img.get_clamped(x - 1, y) + img.get_clamped(x + 1, y);
        (vertical + horizontal) - 4.0 * img.get_clamped(x, y)
    }))
}

/// Binary edge marks at source resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    marks: Vec<u8>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, marks: Vec<u8>) -> Result<Self> {
        if marks.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} marks for a {width}x{height} edge map",
                marks.len()
            )));
        }
        if marks.iter().any(|&m| m > 1) {
            return Err(Error::Argument("edge marks must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            marks,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn marks(&self) -> &[u8] {
        &self.marks
    }

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.marks[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.marks.iter().filter(|&&m| m == 1).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        let marks = self
            .marks
            .chunks_exact(self.width)
            .flat_map(|row| row.iter().rev().copied())
            .collect();
        Self { marks, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    /// Weak threshold as a fraction of the maximum gradient magnitude.
    pub low: f64,
    /// Strong threshold as a fraction of the maximum gradient magnitude.
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.3,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Argument(format!("canny sigma must be > 0, got {}", self.sigma)));
        }
        if !(0.0 <= self.low && self.low <= self.high) {
            return Err(Error::Argument(format!(
                "canny thresholds must satisfy 0 <= low <= high, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

// Relative tolerance under which two gradient magnitudes count as tied.
// Symmetric edges produce magnitudes that are equal in exact arithmetic but
// may differ in the last bit; the tie rule below keeps exactly one of them.
const TIE_TOLERANCE: f64 = 1e-9;

const TAN_22_5: f64 = 0.414_213_562_373_095_03;
const TAN_67_5: f64 = 2.414_213_562_373_095;

/// Quantised gradient direction, as the pixel offset of the "forward"
/// neighbour along the gradient (image y grows downwards).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Horizontal,
    Diagonal,
    Vertical,
    AntiDiagonal,
}

impl Direction {
    pub(crate) fn quantize(gx: f64, gy: f64) -> Self {
        let (ax, ay) = (gx.abs(), gy.abs());
        if ay <= ax * TAN_22_5 {
            Direction::Horizontal
        } else if ay > ax * TAN_67_5 {
            Direction::Vertical
        } else if (gx > 0.0) == (gy > 0.0) {
            Direction::Diagonal
        } else {
            Direction::AntiDiagonal
        }
    }

    fn forward(self) -> (isize, isize) {
        match self {
            Direction::Horizontal => (1, 0),
            Direction::Diagonal => (1, 1),
            Direction::Vertical => (0, 1),
            Direction::AntiDiagonal => (-1, 1),
        }
    }
}

fn tie_slack(a: f64, b: f64) -> f64 {
    TIE_TOLERANCE * a.max(b)
}

/// Gaussian smoothing, Sobel gradients, 4-direction non-maximum suppression,
/// relative double threshold and 8-connected hysteresis.
pub fn canny(img: &Plane, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    require_min_size(img, 5, "canny")?;
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(params.sigma, gaussian_size(params.sigma))?;
    let smooth = convolve_replicate(img, &kernel);
    let grad = sobel_gradients(&smooth)?;

    // Magnitude and direction at source coordinates; the one-pixel border
    // has no valid gradient and stays zero.
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![Direction::Horizontal; w * h];
    for y in 0..grad.height() {
        for x in 0..grad.width() {
            let (gx, gy) = grad.at(x, y);
            let i = (y + 1) * w + x + 1;
            mag[i] = (gx * gx + gy * gy).sqrt();
            dir[i] = Direction::quantize(gx, gy);
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mut marks = vec![0u8; w * h];
    if max <= 0.0 {
        return EdgeMap::new(w, h, marks);
    }

    // 0 = suppressed, 1 = weak, 2 = strong.
    let (low, high) = (params.low * max, params.high * max);
    let mut class = vec![0u8; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 || m < low {
                continue;
            }
            let (dx, dy) = dir[i].forward();
            let fwd = mag[((y as isize + dy) as usize) * w + (x as isize + dx) as usize];
            let back = mag[((y as isize - dy) as usize) * w + (x as isize - dx) as usize];
            // Ties are resolved towards the pixel behind the edge.
            let keep = m >= fwd - tie_slack(m, fwd) && m > back + tie_slack(m, back);
            if keep {
                class[i] = if m >= high { 2 } else { 1 };
            }
        }
    }

    let mut stack: Vec<usize> = (0..w * h).filter(|&i| class[i] == 2).collect();
    for &i in &stack {
        marks[i] = 1;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if marks[j] == 0 && class[j] == 1 {
                    marks[j] = 1;
                    stack.push(j);
                }
            }
        }
    }
    EdgeMap::new(w, h, marks)
}
