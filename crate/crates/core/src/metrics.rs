//! The seven per-image metrics and their composition into a [`MetricVector`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{self, CannyParams, EdgeMap};
use crate::raster::{self, GrayBuffer, HsvBuffer, PixelBuffer, Plane};
use crate::stats;
use crate::texture;

/// Short labels in canonical metric order.
pub const METRIC_ABBREVIATIONS: [&str; 7] = ["TC", "CDC", "OC", "CR", "IS", "ISH", "IC"];

/// Field names in canonical metric order.
pub const METRIC_NAMES: [&str; 7] = [
    "texture_complexity",
    "color_distribution",
    "object_coherence",
    "contextual_relevance",
    "smoothness",
    "sharpness",
    "contrast",
];

pub const TEXTURE_INDEX: usize = 0;
pub const OBJECT_COHERENCE_INDEX: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    /// LBP histogram entropy, bits.
    pub texture_complexity: f64,
    /// Std of the normalised HSV histogram.
    pub color_distribution: f64,
    /// Fraction of pixels marked by Canny.
    pub object_coherence: f64,
    /// Variance of the Sobel gradient magnitude.
    pub contextual_relevance: f64,
    /// `1 / (1 + var(Laplacian))`.
    pub smoothness: f64,
    /// `max |I - blur(I)|`.
    pub sharpness: f64,
    /// Std of grayscale intensities.
    pub contrast: f64,
}

impl MetricVector {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.texture_complexity,
            self.color_distribution,
            self.object_coherence,
            self.contextual_relevance,
            self.smoothness,
            self.sharpness,
            self.contrast,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            texture_complexity: v[0],
            color_distribution: v[1],
            object_coherence: v[2],
            contextual_relevance: v[3],
            smoothness: v[4],
            sharpness: v[5],
            contrast: v[6],
        }
    }
}

/// Every tunable that influences metric values. Embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Longest side after resizing; `None` analyses at native resolution.
    pub resize: Option<usize>,
    /// HSV histogram bins per axis (hue, saturation, value).
    pub hsv_bins: [usize; 3],
    pub lbp_bins: usize,
    pub entropy_epsilon: f64,
    pub blur_sigma: f64,
    /// Sharpness blur kernel size; `None` uses `2*ceil(3*sigma)+1`.
    pub blur_size: Option<usize>,
    pub canny: CannyParams,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            resize: Some(512),
            hsv_bins: [8, 8, 8],
            lbp_bins: texture::LBP_BINS,
            entropy_epsilon: texture::ENTROPY_EPSILON,
            blur_sigma: 1.0,
            blur_size: None,
            canny: CannyParams::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resize == Some(0) {
            return Err(Error::Argument("resize target must be >= 1".into()));
        }
        if self.hsv_bins.iter().any(|&b| b == 0 || b > 360) {
            return Err(Error::Argument(format!(
                "hsv bins must be in 1..=360, got {:?}",
                self.hsv_bins
            )));
        }
        if self.lbp_bins != texture::LBP_BINS {
            return Err(Error::Argument(format!(
                "lbp bins must be {} for 8-neighbour codes",
                texture::LBP_BINS
            )));
        }
        if !(self.entropy_epsilon > 0.0) {
            return Err(Error::Argument("entropy epsilon must be > 0".into()));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::Argument("blur sigma must be > 0".into()));
        }
        if matches!(self.blur_size, Some(s) if s % 2 == 0) {
            return Err(Error::Argument("blur size must be odd".into()));
        }
        self.canny.validate()
    }

    pub fn blur_kernel_size(&self) -> usize {
        self.blur_size
            .unwrap_or_else(|| filters::gaussian_size(self.blur_sigma))
    }
}

pub fn texture_complexity(img: &Plane, epsilon: f64) -> Result<f64> {
    let codes = texture::lbp_code_map(img)?;
    let hist = texture::normalized_histogram(&codes, texture::LBP_BINS)?;
    texture::entropy(&hist, epsilon)
}

/// Normalised 3D HSV histogram, flattened hue-major.
pub fn hsv_histogram(img: &HsvBuffer, bins: [usize; 3]) -> Result<Vec<f64>> {
    let samples = img.samples();
    if samples.is_empty() {
        return Err(Error::EmptyInput("HSV image has no pixels"));
    }
    let [nh, ns, nv] = bins;
    let mut counts = vec![0usize; nh * ns * nv];
    for px in samples {
        let hb = ((px.h / 360.0 * nh as f64) as usize).min(nh - 1);
        let sb = ((px.s * ns as f64) as usize).min(ns - 1);
        let vb = ((px.v * nv as f64) as usize).min(nv - 1);
        counts[(hb * ns + sb) * nv + vb] += 1;
    }
    let total = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

pub fn color_distribution(img: &HsvBuffer, bins: [usize; 3]) -> Result<f64> {
    let hist = hsv_histogram(img, bins)?;
    stats::std_dev(&hist).ok_or(Error::EmptyInput("HSV histogram has no bins"))
}

/// Marked pixels over all pixels.
pub fn edge_fraction(edges: &EdgeMap) -> f64 {
    edges.count() as f64 / (edges.width() * edges.height()) as f64
}

pub fn object_coherence(img: &Plane, canny: &CannyParams) -> Result<f64> {
    filters::canny(img, canny).map(|e| edge_fraction(&e))
}

pub fn contextual_relevance(img: &Plane) -> Result<f64> {
    let mag = filters::sobel_gradients(img)?.magnitude();
    Ok(stats::variance(&mag).unwrap_or(0.0))
}

/// Laplacian variance is taken over the interior, where replicate padding
/// plays no part, so affine images score exactly 1.
pub fn image_smoothness(img: &Plane) -> Result<f64> {
    let lap = filters::laplacian(img)?;
    let var = stats::variance(&lap.interior(1)).unwrap_or(0.0);
    Ok(1.0 / (1.0 + var))
}

pub fn image_sharpness(img: &Plane, sigma: f64, size: usize) -> Result<f64> {
    if img.width() < size || img.height() < size {
        return Err(Error::Dimension(format!(
            "sharpness needs at least {size}x{size}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let kernel = filters::gaussian_kernel(sigma, size)?;
    let blurred = filters::convolve_replicate(img, &kernel);
    Ok(img
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

pub fn image_contrast(img: &Plane) -> Result<f64> {
    stats::std_dev(img.data()).ok_or(Error::EmptyInput("grayscale image has no pixels"))
}

/// All seven metrics from prepared grayscale and HSV rasters.
pub fn compute_from_parts(gray: &GrayBuffer, hsv: &HsvBuffer, cfg: &MetricConfig) -> Result<MetricVector> {
    Ok(MetricVector {
        texture_complexity: texture_complexity(gray, cfg.entropy_epsilon)?,
        color_distribution: color_distribution(hsv, cfg.hsv_bins)?,
        object_coherence: object_coherence(gray, &cfg.canny)?,
        contextual_relevance: contextual_relevance(gray)?,
        smoothness: image_smoothness(gray)?,
        sharpness: image_sharpness(gray, cfg.blur_sigma, cfg.blur_kernel_size())?,
        contrast: image_contrast(gray)?,
    })
}

/// Resizes per `cfg.resize`, converts, and evaluates all seven metrics.
pub fn compute_all(img: &PixelBuffer, cfg: &MetricConfig) -> Result<MetricVector> {
    cfg.validate()?;
    let analysed = raster::analysis_raster(img, cfg.resize)?;
    let gray = raster::to_grayscale(&analysed);
    let hsv = raster::to_hsv(&analysed);
    compute_from_parts(&gray, &hsv, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn delta_std(bins: usize) -> f64 {
        let b = bins as f64;
        (((1.0 - 1.0 / b).powi(2) + (b - 1.0) / (b * b)) / b).sqrt()
    }

    fn native() -> MetricConfig {
        MetricConfig {
            resize: None,
            ..Default::default()
        }
    }

    #[test]
    fn texture_examples() {
        let flat = GrayBuffer::constant(16, 16, 0.5);
        let tc = texture_complexity(&flat, 1e-6).unwrap();
        assert!(tc.abs() < 2e-6);

        let mut rng = StdRng::seed_from_u64(5);
        let noise = GrayBuffer::from_fn(256, 256, |_, _| rng.gen::<f64>());
        assert!(texture_complexity(&noise, 1e-6).unwrap() > 4.0);

        // Period-1 checkerboard: bright centres see only darker 4-neighbours
        // and equal diagonals (code 0b10101010 = 170); dark centres get 255.
        let board = GrayBuffer::from_fn(6, 6, |x, y| ((x + y) % 2) as f64);
        let codes = texture::lbp_code_map(&board).unwrap();
        let mut distinct: Vec<u8> = codes.codes().to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct, vec![170, 255]);
        assert!((texture_complexity(&board, 1e-6).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn color_distribution_examples() {
        // 8x8x8 grid hit once per bin: hues at slice centres, s and v in eighths.
        let mut samples = Vec::new();
        for hb in 0..8 {
            for sb in 0..8 {
                for vb in 0..8 {
                    samples.push(crate::raster::Hsv {
                        h: 45.0 * hb as f64 + 22.5,
                        s: (sb as f64 + 0.5) / 8.0,
                        v: (vb as f64 + 0.5) / 8.0,
                    });
                }
            }
        }
        let img = HsvBuffer::new(64, 8, samples).unwrap();
        let hist = hsv_histogram(&img, [8, 8, 8]).unwrap();
        assert!(hist.iter().all(|&v| v == 1.0 / 512.0));
        assert_eq!(stats::std_dev(&hist).unwrap(), 0.0);

        let one = PixelBuffer::from_rgb_fn(5, 4, |_, _| [30, 140, 90]).unwrap();
        let cd = color_distribution(&raster::to_hsv(&one), [8, 8, 8]).unwrap();
        assert!((cd - delta_std(512)).abs() < 1e-15);
        assert!((cd - 0.044_150_994_357_255_13).abs() < 1e-15);

        // Two bins at 1/2: mean 1/B, var = (2(1/2 - 1/B)^2 + (B-2)/B^2) / B.
        let two = PixelBuffer::from_rgb_fn(4, 4, |x, _| if x < 2 { [255, 0, 0] } else { [0, 0, 255] })
            .unwrap();
        let b: f64 = 512.0;
        let expected = ((2.0 * (0.5 - 1.0 / b).powi(2) + (b - 2.0) / (b * b)) / b).sqrt();
        let cd = color_distribution(&raster::to_hsv(&two), [8, 8, 8]).unwrap();
        assert!((cd - expected).abs() < 1e-15);
    }

    #[test]
    fn object_coherence_examples() {
        let p = CannyParams::default();
        assert_eq!(object_coherence(&GrayBuffer::constant(16, 16, 0.2), &p).unwrap(), 0.0);

        let all = EdgeMap::new(4, 3, vec![1; 12]).unwrap();
        assert_eq!(edge_fraction(&all), 1.0);

        let step = GrayBuffer::from_fn(64, 64, |x, _| if x >= 32 { 1.0 } else { 0.0 });
        let oc = object_coherence(&step, &p).unwrap();
        assert!((oc - 60.0 / 4096.0).abs() <= 64.0 / 4096.0);
        assert_eq!(oc, 62.0 / 4096.0);
    }

    #[test]
    fn contextual_relevance_examples() {
        assert_eq!(contextual_relevance(&GrayBuffer::constant(8, 8, 0.9)).unwrap(), 0.0);
        let ramp = GrayBuffer::from_fn(10, 10, |x, _| x as f64 / 16.0);
        assert_eq!(contextual_relevance(&ramp).unwrap(), 0.0);

        // Left half flat (0), right half ramp of slope 1/16 starting at x=4.
        let img = GrayBuffer::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { (x - 3) as f64 / 16.0 });
        let mut mags = Vec::new();
        for y in 1..7 {
            for x in 1..7 {
                let f = |xx: usize, yy: usize| img.get(xx, yy);
                let gx = (f(x + 1, y - 1) + 2.0 * f(x + 1, y) + f(x + 1, y + 1))
                    - (f(x - 1, y - 1) + 2.0 * f(x - 1, y) + f(x - 1, y + 1));
                mags.push(gx.abs());
            }
        }
        let m = mags.iter().sum::<f64>() / mags.len() as f64;
        let var = mags.iter().map(|v| (v - m).powi(2)).sum::<f64>() / mags.len() as f64;
        // Column magnitudes: 0, 0, 4/16, 8/16, 8/16, 8/16 (x = 1..6).
        let cols: [f64; 6] = [0.0, 0.0, 0.25, 0.5, 0.5, 0.5];
        let cm = cols.iter().sum::<f64>() / 6.0;
        let cvar = cols.iter().map(|v| (v - cm).powi(2)).sum::<f64>() / 6.0;
        assert!((var - cvar).abs() < 1e-15);
        assert!((contextual_relevance(&img).unwrap() - cvar).abs() < 1e-15);
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(image_smoothness(&GrayBuffer::constant(7, 7, 0.3)).unwrap(), 1.0);
        let ramp = GrayBuffer::from_fn(9, 6, |x, y| (x as f64 + 2.0 * y as f64) / 64.0);
        assert_eq!(image_smoothness(&ramp).unwrap(), 1.0);

        // Spike in a 5x5 zero field: interior 3x3 holds -4 and four +1s.
        let spike = GrayBuffer::from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let vals = [-4.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let m: f64 = vals.iter().sum::<f64>() / 9.0;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0;
        assert!((image_smoothness(&spike).unwrap() - 1.0 / (1.0 + var)).abs() < 1e-15);
    }

    #[test]
    fn sharpness_examples() {
        assert_eq!(image_sharpness(&GrayBuffer::constant(9, 9, 0.6), 1.0, 7).unwrap(), 0.0);

        let spike = GrayBuffer::from_fn(11, 11, |x, y| if (x, y) == (5, 5) { 1.0 } else { 0.0 });
        let k = filters::gaussian_kernel(1.0, 7).unwrap();
        let sh = image_sharpness(&spike, 1.0, 7).unwrap();
        assert!((sh - (1.0 - k.center())).abs() < 1e-15);
        assert!((sh - (1.0 - 0.159_241_125_690_702_42)).abs() < 1e-12);

        let step = GrayBuffer::from_fn(24, 8, |x, _| if x >= 12 { 1.0 } else { 0.0 });
        let soft = GrayBuffer::from_fn(24, 8, |x, _| ((x as f64 - 8.5) / 7.0).clamp(0.0, 1.0));
        let hard = image_sharpness(&step, 1.0, 7).unwrap();
        assert!(hard > 0.0 && hard < 1.0);
        assert!(hard > image_sharpness(&soft, 1.0, 7).unwrap());

        assert!(matches!(
            image_sharpness(&GrayBuffer::constant(5, 9, 0.0), 1.0, 7),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(image_contrast(&GrayBuffer::constant(3, 3, 0.2)).unwrap(), 0.0);
        let board = GrayBuffer::from_fn(8, 8, |x, y| ((x + y) % 2) as f64);
        assert_eq!(image_contrast(&board).unwrap(), 0.5);
        let three = GrayBuffer::from_fn(3, 4, |x, _| x as f64 * 0.5);
        assert!((image_contrast(&three).unwrap() - (1.0f64 / 6.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn compute_all_on_constant_gray() {
        let img = PixelBuffer::from_rgb_fn(32, 32, |_, _| [128, 128, 128]).unwrap();
        let m = compute_all(&img, &native()).unwrap();
        assert!(m.texture_complexity.abs() < 2e-6);
        assert_eq!(m.color_distribution, delta_std(512));
        let got = [m.object_coherence, m.contextual_relevance, m.smoothness, m.sharpness, m.contrast];
        for (g, want) in got.iter().zip([0.0, 0.0, 1.0, 0.0, 0.0]) {
            assert!((g - want).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn compute_all_is_deterministic_and_transpose_stable() {
        let mut rng = StdRng::seed_from_u64(11);
        let img = PixelBuffer::from_rgb_fn(40, 24, |_, _| rng.gen()).unwrap();
        let cfg = native();
        let a = compute_all(&img, &cfg).unwrap();
        let b = compute_all(&img, &cfg).unwrap();
        assert_eq!(a, b);

        let t = compute_all(&img.transpose(), &cfg).unwrap();
        assert_eq!(a.contrast, t.contrast);
        assert_eq!(a.color_distribution, t.color_distribution);
        assert_eq!(a.smoothness, t.smoothness);
        assert_eq!(a.texture_complexity, t.texture_complexity);
    }

    #[test]
    fn compute_all_resizes_longest_side() {
        let img = PixelBuffer::from_rgb_fn(20, 10, |x, _| [x as u8 * 10, 0, 0]).unwrap();
        let cfg = MetricConfig {
            resize: Some(40),
            ..Default::default()
        };
        let resized = raster::resize_bilinear(&img, 40, 20).unwrap();
        let direct = compute_all(&resized, &native()).unwrap();
        assert_eq!(compute_all(&img, &cfg).unwrap(), direct);
    }

    #[test]
    fn config_validation() {
        assert!(MetricConfig::default().validate().is_ok());
        let bad = MetricConfig {
            hsv_bins: [0, 8, 8],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MetricConfig {
            blur_size: Some(6),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(MetricConfig::default().blur_kernel_size(), 7);
    }
}
