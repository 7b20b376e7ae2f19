//! Decoded rasters and the colour conversions every metric starts from.
//!
//! Metric math runs on `f64` samples normalised to `[0, 1]`. Decoding is
//! limited to PNG and JPEG; alpha is dropped without compositing.

use std::borrow::Cow;
use std::io::Cursor;
use std::ops::Deref;

use image::{ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
const JPEG_SOI: [u8; 2] = [0xff, 0xd8];

/// Interleaved 8-bit raster, row-major. `channels` is 3 (RGB) or 1 (luma).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl PixelBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!(
                "unsupported channel count {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height}x{channels} raster",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Builds an RGB raster from a per-pixel generator.
    pub fn from_rgb_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                samples.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, 3, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// RGB triple at `(x, y)`; luma rasters replicate the single channel.
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            let v = self.samples[i];
            [v, v, v]
        } else {
            [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
        }
    }

    pub fn transpose(&self) -> Self {
        let c = self.channels;
        let mut samples = Vec::with_capacity(self.samples.len());
        for x in 0..self.width {
            for y in 0..self.height {
                let i = (y * self.width + x) * c;
                samples.extend_from_slice(&self.samples[i..i + c]);
            }
        }
        Self {
            width: self.height,
            height: self.width,
            channels: c,
            samples,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let c = self.channels;
        let mut samples = Vec::with_capacity(self.samples.len());
        for row in self.samples.chunks_exact(self.width * c) {
            for px in row.chunks_exact(c).rev() {
                samples.extend_from_slice(px);
            }
        }
        Self {
            samples,
            ..self.clone()
        }
    }
}

/// Row-major plane of `f64` samples with no range restriction. Filter
/// outputs (gradients, Laplacian responses, blurs) live here.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped into the plane (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    /// Samples whose coordinates lie at least `margin` pixels from every edge.
    pub fn interior(&self, margin: usize) -> Vec<f64> {
        if self.width <= 2 * margin || self.height <= 2 * margin {
            return Vec::new();
        }
        (margin..self.height - margin)
            .flat_map(|y| {
                let row = &self.data[y * self.width..(y + 1) * self.width];
                row[margin..self.width - margin].iter().copied()
            })
            .collect()
    }
}

/// Grayscale intensities, every sample in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayBuffer(Plane);

impl GrayBuffer {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster must be at least 1x1, got {width}x{height}"
            )));
        }
        if let Some(bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!(
                "gray sample {bad} outside [0, 1]"
            )));
        }
        Plane::new(width, height, samples).map(Self)
    }

    /// Builds a buffer from a generator; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self(Plane::from_fn(width, height, |x, y| f(x, y).clamp(0.0, 1.0)))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    /// `1 - I` per sample.
    pub fn invert(&self) -> Self {
        Self(Plane::from_fn(self.width(), self.height(), |x, y| {
            1.0 - self.get(x, y)
        }))
    }
}

impl Deref for GrayBuffer {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsvBuffer {
    width: usize,
    height: usize,
    samples: Vec<Hsv>,
}

impl HsvBuffer {
    pub fn new(width: usize, height: usize, samples: Vec<Hsv>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height} raster",
                samples.len()
            )));
        }
        let valid = |p: &Hsv| {
            (0.0..360.0).contains(&p.h) && (0.0..=1.0).contains(&p.s) && (0.0..=1.0).contains(&p.v)
        };
        if !samples.iter().all(valid) {
            return Err(Error::Argument("HSV sample out of range".into()));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[Hsv] {
        &self.samples
    }
}

/// Decodes a PNG or JPEG stream into an RGB raster, dropping any alpha.
pub fn decode_image(bytes: &[u8]) -> Result<PixelBuffer> {
    let format = sniff_format(bytes)?;
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        other => Error::Decode {
            offset: locate_damage(bytes, format),
            message: other.to_string(),
        },
    })?;
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    PixelBuffer::new(w as usize, h as usize, 3, rgb.into_raw())
}

fn sniff_format(bytes: &[u8]) -> Result<ImageFormat> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        return Ok(ImageFormat::Png);
    }
    if bytes.starts_with(&JPEG_SOI) {
        return Ok(ImageFormat::Jpeg);
    }
    if !bytes.is_empty() && PNG_SIGNATURE.starts_with(bytes) {
        return Err(Error::Decode {
            offset: Some(bytes.len()),
            message: "truncated PNG signature".into(),
        });
    }
    if bytes.is_empty() {
        return Err(Error::Decode {
            offset: Some(0),
            message: "empty stream".into(),
        });
    }
    Err(Error::UnsupportedFormat(
        "stream is neither PNG nor JPEG".into(),
    ))
}

/// Walks the container structure and returns the byte offset of the first
/// chunk or segment that is cut short.
fn locate_damage(bytes: &[u8], format: ImageFormat) -> Option<usize> {
    match format {
        ImageFormat::Png => png_damage(bytes),
        ImageFormat::Jpeg => jpeg_damage(bytes),
        _ => None,
    }
}

fn png_damage(bytes: &[u8]) -> Option<usize> {
    let mut pos = PNG_SIGNATURE.len();
    loop {
        if pos + 8 > bytes.len() {
            return Some(pos);
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind = &bytes[pos + 4..pos + 8];
        if pos + 12 + len > bytes.len() {
            return Some(pos);
        }
        if kind == b"IEND" {
            return None;
        }
        pos += 12 + len;
    }
}

fn jpeg_damage(bytes: &[u8]) -> Option<usize> {
    let mut pos = JPEG_SOI.len();
    loop {
        if pos + 2 > bytes.len() {
            return Some(pos);
        }
        if bytes[pos] != 0xff {
            return Some(pos);
        }
        let marker = bytes[pos + 1];
        match marker {
            0xd9 => return None,
            0x01 | 0xd0..=0xd7 | 0xff => {
                pos += if marker == 0xff { 1 } else { 2 };
                continue;
            }
            _ => {}
        }
        if pos + 4 > bytes.len() {
            return Some(pos);
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if len < 2 || pos + 2 + len > bytes.len() {
            return Some(pos);
        }
        pos += 2 + len;
        if marker == 0xda {
            // Entropy-coded data runs until the next non-RST marker.
            while pos + 1 < bytes.len() {
                if bytes[pos] == 0xff && !matches!(bytes[pos + 1], 0x00 | 0xd0..=0xd7) {
                    break;
                }
                pos += 1;
            }
            if pos + 1 >= bytes.len() {
                return Some(bytes.len());
            }
        }
    }
}

/// Encodes a raster as PNG (RGB or 8-bit grayscale).
pub fn encode_png(img: &PixelBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
        .write_image(&img.samples, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Decode {
            offset: None,
            message: format!("PNG encoding failed: {e}"),
        })?;
    Ok(out)
}

/// BT.601 luma, normalised to `[0, 1]`.
///
/// The weighted sum is formed in integers (weights scaled by 1000) so that
/// white maps to exactly `1.0`.
pub fn to_grayscale(img: &PixelBuffer) -> GrayBuffer {
    let data = (0..img.height)
        .flat_map(|y| (0..img.width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let [r, g, b] = img.rgb(x, y);
            let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
            weighted as f64 / 255_000.0
        })
        .collect();
    GrayBuffer(Plane {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Hexcone RGB to HSV; achromatic pixels get `h = 0, s = 0`.
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> Hsv {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f64 / 255.0;
    if max == min {
        return Hsv { h: 0.0, s: 0.0, v };
    }
    let delta = (max - min) as f64;
    let s = delta / max as f64;
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let sector = if max as f64 == r {
        (g - b) / delta
    } else if max as f64 == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v }
}

pub fn to_hsv(img: &PixelBuffer) -> HsvBuffer {
    let samples = (0..img.height)
        .flat_map(|y| (0..img.width).map(move |x| (x, y)))
        .map(|(x, y)| rgb_to_hsv(img.rgb(x, y)))
        .collect();
    HsvBuffer {
        width: img.width,
        height: img.height,
        samples,
    }
}

/// Bilinear resampling with pixel-centre alignment; results are rounded
/// half-up to 8 bits.
pub fn resize_bilinear(img: &PixelBuffer, width: usize, height: usize) -> Result<PixelBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "resize target must be at least 1x1, got {width}x{height}"
        )));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let c = img.channels;
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut samples = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, sx, img.width);
            for ch in 0..c {
                let at = |xx: usize, yy: usize| img.samples[(yy * img.width + xx) * c + ch] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                samples.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    PixelBuffer::new(width, height, c, samples)
}

/// Dimensions after scaling the longest side to `target`, aspect preserved.
pub fn fit_longest_side(width: usize, height: usize, target: usize) -> (usize, usize) {
    let longest = width.max(height);
    let scale = |side: usize| ((side as f64 * target as f64 / longest as f64).round() as usize).max(1);
    if width >= height {
        (target, scale(height))
    } else {
        (scale(width), target)
    }
}

/// The raster metrics are computed on: resized so the longest side equals
/// `target`, or borrowed unchanged when `target` is `None`.
pub fn analysis_raster(img: &PixelBuffer, target: Option<usize>) -> Result<Cow<'_, PixelBuffer>> {
    match target {
        Some(t) => {
            let (w, h) = fit_longest_side(img.width(), img.height(), t);
            resize_bilinear(img, w, h).map(Cow::Owned)
        }
        None => Ok(Cow::Borrowed(img)),
    }
}
