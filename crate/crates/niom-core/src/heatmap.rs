//! Per-pixel semantic importance maps.
//!
//! Heatmaps stand in for the detector + class-activation stage: they can be
//! ingested from files produced by external models (NIOH containers, 8-bit
//! PGM) or synthesized from detection boxes as axis-aligned Gaussian blobs.
//! Per-pixel aggregation across objects is a maximum, and class identity is
//! discarded after aggregation.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::raster::{parse_pgm, sample_bilinear_slice};

pub const NIOH_MAGIC: &[u8; 4] = b"NIOH";
pub const NIOH_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic bytes (expected NIOH container or P5 PGM)")]
    BadMagic,
    #[error("unsupported NIOH version {0}")]
    BadVersion(u32),
    #[error("truncated NIOH payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite heatmap value at index {0}")]
    NonFinite(usize),
    #[error("heatmap value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("heatmap dimensions must be at least 1x1")]
    EmptyHeatmap,
    #[error("value grid length {len} does not match {width}x{height}")]
    LengthMismatch {
        len: usize,
        width: usize,
        height: usize,
    },
    #[error("cannot aggregate an empty heatmap list")]
    EmptyAggregate,
    #[error("heatmap dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("degenerate detection box (zero width or height)")]
    DegenerateBox,
    #[error("detection score {0} outside [0, 1]")]
    BadScore(f32),
    #[error("non-finite sample position ({0}, {1})")]
    NonFinitePosition(f32, f32),
}

/// Dense importance raster with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, HeatmapError> {
        if width == 0 || height == 0 {
            return Err(HeatmapError::EmptyHeatmap);
        }
        if values.len() != width * height {
            return Err(HeatmapError::LengthMismatch {
                len: values.len(),
                width,
                height,
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(HeatmapError::NonFinite(i));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(HeatmapError::OutOfRange { index: i, value: v });
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Axis-aligned detection box with a confidence score, the synthetic
/// stand-in for an object detector output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
    pub score: f32,
}

impl DetectionBox {
    pub fn new(
        x_min: f32,
        y_min: f32,
        x_max: f32,
        y_max: f32,
        score: f32,
    ) -> Result<Self, HeatmapError> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(HeatmapError::DegenerateBox);
        }
        if !(0.0..=1.0).contains(&score) || !score.is_finite() {
            return Err(HeatmapError::BadScore(score));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            score,
        })
    }
}

/// Load a heatmap from a NIOH container or an 8-bit P5 PGM, resampled
/// bilinearly to `target_size` (width, height). PGM values are divided by
/// 255; NIOH float values are clamped to `[0, 1]` and must be finite.
pub fn load_heatmap(path: &Path, target_size: (usize, usize)) -> Result<Heatmap, HeatmapError> {
    let bytes = std::fs::read(path).map_err(|source| HeatmapError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw = decode_heatmap(&bytes)?;
    resample(&raw, target_size.0, target_size.1)
}

pub(crate) fn decode_heatmap(bytes: &[u8]) -> Result<Heatmap, HeatmapError> {
    if bytes.starts_with(NIOH_MAGIC) {
        return decode_nioh(bytes);
    }
    if bytes.starts_with(b"P5") {
        let gray = parse_pgm(bytes).ok_or(HeatmapError::BadMagic)?;
        return Heatmap::new(gray.width(), gray.height(), gray.pixels().to_vec());
    }
    Err(HeatmapError::BadMagic)
}

fn decode_nioh(bytes: &[u8]) -> Result<Heatmap, HeatmapError> {
    let header_len = 4 + 4 + 4 + 4;
    if bytes.len() < header_len {
        return Err(HeatmapError::Truncated {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != NIOH_VERSION {
        return Err(HeatmapError::BadVersion(version));
    }
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    if width == 0 || height == 0 {
        return Err(HeatmapError::EmptyHeatmap);
    }
    let expected = header_len + width * height * 4;
    if bytes.len() < expected {
        return Err(HeatmapError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let off = header_len + i * 4;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(HeatmapError::NonFinite(i));
        }
        values.push(v.clamp(0.0, 1.0));
    }
    Heatmap::new(width, height, values)
}

/// Write a heatmap as a NIOH container (little-endian float32 grid).
pub fn save_heatmap(path: &Path, heatmap: &Heatmap) -> Result<(), HeatmapError> {
    let mut bytes = Vec::with_capacity(16 + heatmap.values.len() * 4);
    bytes.extend_from_slice(NIOH_MAGIC);
    bytes.extend_from_slice(&NIOH_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(heatmap.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(heatmap.height as u32).to_le_bytes());
    for v in &heatmap.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|source| HeatmapError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Bilinear resize with corner alignment. The identity size is a bit-exact
/// copy, and a 1x1 source extends to a constant grid.
fn resample(src: &Heatmap, width: usize, height: usize) -> Result<Heatmap, HeatmapError> {
    if width == 0 || height == 0 {
        return Err(HeatmapError::EmptyHeatmap);
    }
    if width == src.width && height == src.height {
        return Ok(src.clone());
    }
    let scale = |dst: usize, dst_len: usize, src_len: usize| -> f32 {
        if dst_len <= 1 {
            (src_len - 1) as f32 * 0.5
        } else {
            dst as f32 * (src_len - 1) as f32 / (dst_len - 1) as f32
        }
    };
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = scale(y, height, src.height);
        for x in 0..width {
            let sx = scale(x, width, src.width);
            values.push(sample(src, sx, sy).expect("finite grid coordinates"));
        }
    }
    Heatmap::new(width, height, values)
}

/// Synthesize a heatmap from detection boxes: one axis-aligned Gaussian blob
/// per box (sigma = extent / 4, peak = score), combined per pixel by maximum.
/// An empty box list yields the all-zero heatmap.
pub fn synth_heatmap(
    boxes: &[DetectionBox],
    size: (usize, usize),
) -> Result<Heatmap, HeatmapError> {
    let (width, height) = size;
    if width == 0 || height == 0 {
        return Err(HeatmapError::EmptyHeatmap);
    }
    // Clamp boxes to the raster; fully outside boxes degenerate.
    let mut clamped = Vec::with_capacity(boxes.len());
    for b in boxes {
        let x_min = b.x_min.clamp(0.0, width as f32);
        let x_max = b.x_max.clamp(0.0, width as f32);
        let y_min = b.y_min.clamp(0.0, height as f32);
        let y_max = b.y_max.clamp(0.0, height as f32);
        if !(x_min < x_max && y_min < y_max) {
            return Err(HeatmapError::DegenerateBox);
        }
        clamped.push(DetectionBox {
            x_min,
            y_min,
            x_max,
            y_max,
            score: b.score,
        });
    }

    let mut values = vec![0.0f32; width * height];
    for b in &clamped {
        let cx = 0.5 * (b.x_min + b.x_max);
        let cy = 0.5 * (b.y_min + b.y_max);
        let sigma_x = (b.x_max - b.x_min) / 4.0;
        let sigma_y = (b.y_max - b.y_min) / 4.0;
        for y in 0..height {
            let dy = (y as f32 - cy) / sigma_y;
            for x in 0..width {
                let dx = (x as f32 - cx) / sigma_x;
                let v = b.score * (-0.5 * (dx * dx + dy * dy)).exp();
                let cell = &mut values[y * width + x];
                *cell = cell.max(v);
            }
        }
    }
    Heatmap::new(width, height, values)
}

/// Per-pixel maximum of equally sized heatmaps.
pub fn aggregate(heatmaps: &[Heatmap]) -> Result<Heatmap, HeatmapError> {
    let first = heatmaps.first().ok_or(HeatmapError::EmptyAggregate)?;
    let mut values = first.values.clone();
    for h in &heatmaps[1..] {
        if h.width != first.width || h.height != first.height {
            return Err(HeatmapError::DimensionMismatch(
                first.width,
                first.height,
                h.width,
                h.height,
            ));
        }
        for (acc, &v) in values.iter_mut().zip(&h.values) {
            *acc = acc.max(v);
        }
    }
    Heatmap::new(first.width, first.height, values)
}

/// Bilinear sample at a subpixel position; out-of-raster positions clamp to
/// the nearest edge pixel. The result is clamped into the min/max of the four
/// surrounding values so it can never leave their envelope.
pub fn sample(h: &Heatmap, x: f32, y: f32) -> Result<f32, HeatmapError> {
    if !x.is_finite() || !y.is_finite() {
        return Err(HeatmapError::NonFinitePosition(x, y));
    }
    let cx = x.clamp(0.0, (h.width - 1) as f32);
    let cy = y.clamp(0.0, (h.height - 1) as f32);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(h.width - 1);
    let y1 = (y0 + 1).min(h.height - 1);
    let corners = [
        h.get(x0, y0),
        h.get(x1, y0),
        h.get(x0, y1),
        h.get(x1, y1),
    ];
    let lo = corners.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = corners.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let v = sample_bilinear_slice(&h.values, h.width, h.height, x, y);
    Ok(v.clamp(lo, hi))
}
