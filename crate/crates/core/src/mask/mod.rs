//! Binary and probability masks and the set operations built on them.
//!
//! Masks are row-major grids with strictly positive dimensions. Binary
//! operations between two masks require identical dimensions and fail with
//! [`MaskError::DimensionMismatch`] otherwise.

mod components;
mod io;
mod morphology;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::path::PathBuf;

pub use components::connected_components;
pub use io::{
    decode_mask_png, decode_probability_png, encode_mask_png, encode_probability_png, load_mask,
    load_probability, save_mask, save_probability,
};
pub use morphology::{dilate, DEFAULT_DILATION_ITERATIONS, DEFAULT_KERNEL_SIZE};

/// Errors raised by mask construction, I/O and binary operations.
#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("mask dimensions must be positive, got {0}x{1}")]
    ZeroDimension(u32, u32),
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("kernel size must be odd and >= 1, got {0}")]
    InvalidKernel(usize),
    #[error("union of an empty list needs reference dimensions")]
    EmptyUnion,
    #[error("{path}: unsupported image format: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MaskError>;

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }
}

/// A foreground/background map.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "BinaryMask {}x{} ({} fg)",
            self.width,
            self.height,
            self.count()
        )?;
        if self.pixels.len() <= 64 * 64 {
            for row in self.pixels.chunks(self.width as usize) {
                let line: String = row.iter().map(|&p| if p { '#' } else { '.' }).collect();
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(MaskError::ZeroDimension(width, height));
    }
    Ok(())
}

impl BinaryMask {
    /// All-background mask.
    ///
    /// Panics if either dimension is zero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut m = Self::new(width, height);
        m.pixels.fill(true);
        m
    }

    pub fn from_vec(width: u32, height: u32, pixels: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(MaskError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.pixels[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    /// Parses an ASCII picture: `#` (or `1`) is foreground, `.` (or `0`) is
    /// background. Blank lines and surrounding whitespace are ignored.
    pub fn from_ascii(art: &str) -> Result<Self> {
        let rows: Vec<&str> = art
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.chars().count()) as u32;
        check_dims(width, height)?;
        let mut pixels = Vec::with_capacity((width * height) as usize);
        for row in &rows {
            if row.chars().count() as u32 != width {
                return Err(MaskError::BufferLength {
                    expected: width as usize,
                    actual: row.chars().count(),
                });
            }
            pixels.extend(row.chars().map(|c| c == '#' || c == '1'));
        }
        Self::from_vec(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.pixels[(y * self.width + x) as usize] = value;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| !p).collect(),
        }
    }

    /// `true` if every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        same_dims(self, other)?;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .all(|(&a, &b)| !a || b))
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        same_dims(self, other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for (i, _) in self.pixels.iter().enumerate().filter(|(_, &p)| p) {
            let x = i as u32 % self.width;
            let y = i as u32 / self.width;
            bbox = Some(match bbox {
                None => BoundingBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(b) => BoundingBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            });
        }
        bbox
    }

    /// Renders as ASCII art, the inverse of [`BinaryMask::from_ascii`].
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(self.pixels.len() + self.height as usize);
        for row in self.pixels.chunks(self.width as usize) {
            out.extend(row.iter().map(|&p| if p { '#' } else { '.' }));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

// Compact serde form: row-major run lengths, alternating background and
// foreground, starting with background.
#[derive(Serialize, Deserialize)]
struct MaskRuns {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &p in &self.pixels {
            if p != current {
                runs.push(len);
                current = p;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        MaskRuns {
            width: self.width,
            height: self.height,
            runs,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = MaskRuns::deserialize(deserializer)?;
        let mut pixels = Vec::with_capacity(r.width as usize * r.height as usize);
        let mut value = false;
        for len in r.runs {
            pixels.extend(std::iter::repeat_n(value, len as usize));
            value = !value;
        }
        BinaryMask::from_vec(r.width, r.height, pixels).map_err(serde::de::Error::custom)
    }
}

/// Per-pixel change probability, quantized to 256 levels (`level / 255`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbabilityMask {
    width: u32,
    height: u32,
    levels: Vec<u8>,
}

/// Quantizes a probability to the nearest 8-bit level, ties rounding down,
/// so that 0.5 lands on level 127 and stays below a 0.5 cut.
pub fn quantize_probability(p: f64) -> u8 {
    let scaled = p.clamp(0.0, 1.0) * 255.0;
    (scaled - 0.5).ceil().clamp(0.0, 255.0) as u8
}

impl ProbabilityMask {
    pub fn from_levels(width: u32, height: u32, levels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if levels.len() != expected {
            return Err(MaskError::BufferLength {
                expected,
                actual: levels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            levels,
        })
    }

    /// Builds a map from probabilities, quantizing each with
    /// [`quantize_probability`].
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut levels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                levels.push(quantize_probability(f(x, y)));
            }
        }
        Self {
            width,
            height,
            levels,
        }
    }

    pub fn uniform(width: u32, height: u32, p: f64) -> Self {
        Self::from_fn(width, height, |_, _| p)
    }

    /// Lifts a binary mask to probabilities 0 and 1.
    pub fn from_binary(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            levels: mask
                .pixels
                .iter()
                .map(|&p| if p { 255 } else { 0 })
                .collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        f64::from(self.levels[(y * self.width + x) as usize]) / 255.0
    }
}

/// Foreground wherever the probability is strictly greater than `t`.
pub fn threshold(p: &ProbabilityMask, t: f64) -> BinaryMask {
    BinaryMask {
        width: p.width,
        height: p.height,
        pixels: p.levels.iter().map(|&l| f64::from(l) / 255.0 > t).collect(),
    }
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize)> {
    same_dims(a, b)?;
    let mut inter = 0;
    let mut union = 0;
    for (&pa, &pb) in a.pixels.iter().zip(&b.pixels) {
        inter += usize::from(pa && pb);
        union += usize::from(pa || pb);
    }
    Ok((inter, union))
}

/// Intersection over union. Two empty masks agree perfectly and score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap_counts(a, b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `true` when the masks share no foreground pixel.
pub fn disjoint(a: &BinaryMask, b: &BinaryMask) -> Result<bool> {
    same_dims(a, b)?;
    Ok(!a.pixels.iter().zip(&b.pixels).any(|(&pa, &pb)| pa && pb))
}

/// Pixel-wise OR. `dims` is required when `masks` is empty and must agree
/// with the masks otherwise.
pub fn union(masks: &[BinaryMask], dims: Option<(u32, u32)>) -> Result<BinaryMask> {
    let (width, height) = match (masks.first(), dims) {
        (Some(m), _) => m.dims(),
        (None, Some(d)) => d,
        (None, None) => return Err(MaskError::EmptyUnion),
    };
    check_dims(width, height)?;
    if let Some(d) = dims {
        if d != (width, height) {
            return Err(MaskError::DimensionMismatch {
                left: d,
                right: (width, height),
            });
        }
    }
    let mut out = BinaryMask::new(width, height);
    for m in masks {
        same_dims(&out, m)?;
        for (o, &p) in out.pixels.iter_mut().zip(&m.pixels) {
            *o |= p;
        }
    }
    Ok(out)
}
