//! Classical keypoint detection and description.
//!
//! Harris corners plus an upright SIFT-like descriptor in `[0, 1]^128`. This
//! is the desk-scale stand-in for a learned detector; externally computed
//! keypoints enter through the NIOK container instead.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::raster::GrayRaster;

pub const NIOK_MAGIC: &[u8; 4] = b"NIOK";
pub const NIOK_VERSION: u32 = 1;

/// Patch half-extent plus interpolation slack; keypoints closer than this to
/// a border cannot be described.
pub const DESCRIPTOR_MARGIN: f32 = 12.0;

const DESCRIPTOR_DIM: usize = 128;
const PATCH: usize = 16;
const SPATIAL_CELLS: usize = 4;
const ORI_BINS: usize = 8;
const CLIP: f64 = 0.2;
const HARRIS_K: f32 = 0.04;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image {0}x{1} is too small (minimum 32x32)")]
    ImageTooSmall(usize, usize),
    #[error("image contains non-finite pixels")]
    NonFinitePixels,
    #[error("max_keypoints must be at least 1")]
    NoKeypointBudget,
    #[error("keypoint {index} at ({x}, {y}) violates the {margin} px descriptor margin")]
    OutsideMargin {
        index: usize,
        x: f32,
        y: f32,
        margin: f32,
    },
    #[error("keypoint count {keypoints} does not match descriptor count {descriptors}")]
    CountMismatch {
        keypoints: usize,
        descriptors: usize,
    },
    #[error("descriptor {index} entry {value} outside [0, 1]")]
    EntryOutOfRange { index: usize, value: f32 },
    #[error("descriptor {index} has L2 norm {norm} > 1")]
    NormTooLarge { index: usize, norm: f64 },
    #[error("keypoint {index} is invalid (non-finite position or negative response)")]
    BadKeypoint { index: usize },
    #[error("descriptor data length {len} is not a multiple of dim {dim}")]
    RaggedDescriptors { len: usize, dim: usize },
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad NIOK magic or version in {0}")]
    BadContainer(PathBuf),
    #[error("truncated NIOK payload in {0}")]
    Truncated(PathBuf),
}

/// Subpixel keypoint with its detector response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub response: f32,
}

/// Dense `n x dim` descriptor storage, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    dim: usize,
    data: Vec<f32>,
}

impl Descriptors {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(FeatureError::RaggedDescriptors {
                len: data.len(),
                dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Keypoints plus descriptors with entries in `[0, 1]` and unit-bounded norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    keypoints: Vec<Keypoint>,
    descriptors: Descriptors,
}

impl DescriptorSet {
    pub fn new(keypoints: Vec<Keypoint>, descriptors: Descriptors) -> Result<Self, FeatureError> {
        if keypoints.len() != descriptors.len() {
            return Err(FeatureError::CountMismatch {
                keypoints: keypoints.len(),
                descriptors: descriptors.len(),
            });
        }
        for (index, kp) in keypoints.iter().enumerate() {
            if !kp.x.is_finite() || !kp.y.is_finite() || !kp.response.is_finite() || kp.response < 0.0
            {
                return Err(FeatureError::BadKeypoint { index });
            }
        }
        for (index, row) in descriptors.rows().enumerate() {
            let mut sq = 0.0f64;
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(FeatureError::EntryOutOfRange { index, value: v });
                }
                sq += f64::from(v) * f64::from(v);
            }
            let norm = sq.sqrt();
            if norm > 1.0 + 1e-6 {
                return Err(FeatureError::NormTooLarge { index, norm });
            }
        }
        Ok(Self {
            keypoints,
            descriptors,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            keypoints: Vec::new(),
            descriptors: Descriptors::empty(dim),
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &Descriptors {
        &self.descriptors
    }

    pub fn positions(&self) -> Vec<(f32, f32)> {
        self.keypoints.iter().map(|k| (k.x, k.y)).collect()
    }
}

/// Harris detector settings.
#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    pub max_keypoints: usize,
    pub nms_radius: f32,
    pub threshold: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 2048,
            nms_radius: 4.0,
            threshold: 1e-6,
        }
    }
}

fn validate_image(image: &GrayRaster) -> Result<(), FeatureError> {
    if image.width() < 32 || image.height() < 32 {
        return Err(FeatureError::ImageTooSmall(image.width(), image.height()));
    }
    if !image.all_finite() {
        return Err(FeatureError::NonFinitePixels);
    }
    Ok(())
}

/// Harris corner response map: Sobel gradients (1/8 normalized), structure
/// tensor smoothed with a 3x3 Gaussian window, `det - k * trace^2` (k = 0.04).
fn harris_response(image: &GrayRaster) -> GrayRaster {
    let w = image.width();
    let h = image.height();
    let at = |x: isize, y: isize| -> f32 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        image.get(xc, yc)
    };

    let mut ixx = vec![0.0f32; w * h];
    let mut iyy = vec![0.0f32; w * h];
    let mut ixy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) - at(x - 1, y - 1)
                + 2.0 * (at(x + 1, y) - at(x - 1, y))
                + at(x + 1, y + 1) - at(x - 1, y + 1))
                / 8.0;
            let gy = (at(x - 1, y + 1) - at(x - 1, y - 1)
                + 2.0 * (at(x, y + 1) - at(x, y - 1))
                + at(x + 1, y + 1) - at(x + 1, y - 1))
                / 8.0;
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }

    // 3x3 binomial window, weights [1 2 1] x [1 2 1] / 16.
    let smooth = |buf: &[f32], x: isize, y: isize| -> f32 {
        let v = |dx: isize, dy: isize| {
            let xc = (x + dx).clamp(0, w as isize - 1) as usize;
            let yc = (y + dy).clamp(0, h as isize - 1) as usize;
            buf[yc * w + xc]
        };
        (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1)
            + 2.0 * v(-1, 0) + 4.0 * v(0, 0) + 2.0 * v(1, 0)
            + v(-1, 1) + 2.0 * v(0, 1) + v(1, 1))
            / 16.0
    };

    GrayRaster::from_fn(w, h, |x, y| {
        let sxx = smooth(&ixx, x as isize, y as isize);
        let syy = smooth(&iyy, x as isize, y as isize);
        let sxy = smooth(&ixy, x as isize, y as isize);
        let det = sxx * syy - sxy * sxy;
        let trace = sxx + syy;
        det - HARRIS_K * trace * trace
    })
}

/// Detect Harris corners: threshold, 3x3 local maxima, subpixel refinement by
/// quadratic fit, greedy radius suppression in response order, top-k cap.
pub fn detect(image: &GrayRaster, config: &DetectorConfig) -> Result<Vec<Keypoint>, FeatureError> {
    validate_image(image)?;
    if config.max_keypoints == 0 {
        return Err(FeatureError::NoKeypointBudget);
    }

    let response = harris_response(image);
    let w = response.width();
    let h = response.height();
    let r = |x: usize, y: usize| response.get(x, y);

    let mut candidates: Vec<Keypoint> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = r(x, y);
            if v <= config.threshold {
                continue;
            }
            let is_max = v >= r(x - 1, y - 1)
                && v >= r(x, y - 1)
                && v >= r(x + 1, y - 1)
                && v >= r(x - 1, y)
                && v >= r(x + 1, y)
                && v >= r(x - 1, y + 1)
                && v >= r(x, y + 1)
                && v >= r(x + 1, y + 1);
            if !is_max {
                continue;
            }
            // Quadratic fit over the 3x3 response neighborhood.
            let gx = 0.5 * (r(x + 1, y) - r(x - 1, y));
            let gy = 0.5 * (r(x, y + 1) - r(x, y - 1));
            let hxx = r(x + 1, y) - 2.0 * v + r(x - 1, y);
            let hyy = r(x, y + 1) - 2.0 * v + r(x, y - 1);
            let hxy = 0.25 * (r(x + 1, y + 1) - r(x - 1, y + 1) - r(x + 1, y - 1) + r(x - 1, y - 1));
            let det = hxx * hyy - hxy * hxy;
            let (mut dx, mut dy) = if det.abs() > 1e-18 {
                (
                    (-gx * hyy + gy * hxy) / det,
                    (gx * hxy - gy * hxx) / det,
                )
            } else {
                (0.0, 0.0)
            };
            dx = dx.clamp(-0.5, 0.5);
            dy = dy.clamp(-0.5, 0.5);
            let refined = (v + 0.5 * (gx * dx + gy * dy)).max(0.0);
            candidates.push(Keypoint {
                x: x as f32 + dx,
                y: y as f32 + dy,
                response: refined,
            });
        }
    }

    // Deterministic total order: response descending, then scan position.
    candidates.sort_unstable_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
            .then(a.x.partial_cmp(&b.x).unwrap())
    });

    if config.nms_radius <= 0.0 {
        candidates.truncate(config.max_keypoints);
        return Ok(candidates);
    }

    // Grid-bucketed greedy suppression: any point within the radius lives in
    // one of the 3x3 neighbor cells when the cell size equals the radius.
    let cell = config.nms_radius;
    let cells_x = (w as f32 / cell).ceil() as i64 + 1;
    let cells_y = (h as f32 / cell).ceil() as i64 + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); (cells_x * cells_y) as usize];
    let cell_of = |px: f32, py: f32| -> (i64, i64) {
        (
            (px / cell).floor() as i64,
            (py / cell).floor() as i64,
        )
    };
    let radius_sq = config.nms_radius * config.nms_radius;
    let mut kept: Vec<Keypoint> = Vec::new();
    for kp in candidates {
        let (cx, cy) = cell_of(kp.x, kp.y);
        let mut suppressed = false;
        'scan: for ny in (cy - 1).max(0)..=(cy + 1).min(cells_y - 1) {
            for nx in (cx - 1).max(0)..=(cx + 1).min(cells_x - 1) {
                for &idx in &grid[(ny * cells_x + nx) as usize] {
                    let other: &Keypoint = &kept[idx];
                    let dx = other.x - kp.x;
                    let dy = other.y - kp.y;
                    if dx * dx + dy * dy < radius_sq {
                        suppressed = true;
                        break 'scan;
                    }
                }
            }
        }
        if !suppressed {
            grid[(cy * cells_x + cx) as usize].push(kept.len());
            kept.push(kp);
            if kept.len() == config.max_keypoints {
                break;
            }
        }
    }
    Ok(kept)
}

/// Upright SIFT-like descriptor: 16x16 bilinear patch, central-difference
/// gradients, 4x4 spatial cells x 8 orientation bins with trilinear binning,
/// L2 normalize, clip at 0.2, renormalize. A patch with zero gradient energy
/// yields the all-zero descriptor.
pub fn describe(image: &GrayRaster, keypoints: &[Keypoint]) -> Result<DescriptorSet, FeatureError> {
    validate_image(image)?;
    let w = image.width() as f32;
    let h = image.height() as f32;
    let mut data = Vec::with_capacity(keypoints.len() * DESCRIPTOR_DIM);
    for (index, kp) in keypoints.iter().enumerate() {
        let x = kp.x.clamp(0.0, w - 1.0);
        let y = kp.y.clamp(0.0, h - 1.0);
        if x < DESCRIPTOR_MARGIN
            || y < DESCRIPTOR_MARGIN
            || x > w - 1.0 - DESCRIPTOR_MARGIN
            || y > h - 1.0 - DESCRIPTOR_MARGIN
        {
            return Err(FeatureError::OutsideMargin {
                index,
                x: kp.x,
                y: kp.y,
                margin: DESCRIPTOR_MARGIN,
            });
        }
        data.extend_from_slice(&describe_patch(image, x, y));
    }
    DescriptorSet::new(
        keypoints.to_vec(),
        Descriptors::new(DESCRIPTOR_DIM, data)?,
    )
}

fn describe_patch(image: &GrayRaster, x: f32, y: f32) -> [f32; DESCRIPTOR_DIM] {
    // 18x18 sample grid so the 16x16 interior has central differences.
    const GRID: usize = PATCH + 2;
    let mut patch = [[0.0f32; GRID]; GRID];
    for (j, row) in patch.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = image.sample_bilinear(x + i as f32 - 8.5, y + j as f32 - 8.5);
        }
    }

    let sigma = PATCH as f64 / 2.0;
    let mut hist = [0.0f64; DESCRIPTOR_DIM];
    for b in 0..PATCH {
        for a in 0..PATCH {
            let gx = f64::from(patch[b + 1][a + 2] - patch[b + 1][a]) * 0.5;
            let gy = f64::from(patch[b + 2][a + 1] - patch[b][a + 1]) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let du = a as f64 - 7.5;
            let dv = b as f64 - 7.5;
            let weight = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            let cu = du / 4.0 + 1.5;
            let cv = dv / 4.0 + 1.5;
            let mut ori = gy.atan2(gx) / std::f64::consts::TAU * ORI_BINS as f64;
            if ori < 0.0 {
                ori += ORI_BINS as f64;
            }
            let cu0 = cu.floor();
            let cv0 = cv.floor();
            let o0 = ori.floor();
            let fu = cu - cu0;
            let fv = cv - cv0;
            let fo = ori - o0;
            let contribution = mag * weight;
            for (iu, wu) in [(cu0 as isize, 1.0 - fu), (cu0 as isize + 1, fu)] {
                if !(0..SPATIAL_CELLS as isize).contains(&iu) {
                    continue;
                }
                for (iv, wv) in [(cv0 as isize, 1.0 - fv), (cv0 as isize + 1, fv)] {
                    if !(0..SPATIAL_CELLS as isize).contains(&iv) {
                        continue;
                    }
                    for (io, wo) in [(o0 as usize % ORI_BINS, 1.0 - fo), ((o0 as usize + 1) % ORI_BINS, fo)]
                    {
                        let bin = (iv as usize * SPATIAL_CELLS + iu as usize) * ORI_BINS + io;
                        hist[bin] += contribution * wu * wv * wo;
                    }
                }
            }
        }
    }

    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = [0.0f32; DESCRIPTOR_DIM];
    if norm == 0.0 {
        return out;
    }
    let mut clipped = [0.0f64; DESCRIPTOR_DIM];
    for (c, v) in clipped.iter_mut().zip(&hist) {
        *c = (v / norm).min(CLIP);
    }
    let renorm = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (o, c) in out.iter_mut().zip(&clipped) {
        *o = (c / renorm) as f32;
    }
    out
}

/// Detect then describe, dropping keypoints whose patch would leave the image.
pub fn detect_and_describe(
    image: &GrayRaster,
    config: &DetectorConfig,
) -> Result<DescriptorSet, FeatureError> {
    let keypoints = detect(image, config)?;
    let w = image.width() as f32;
    let h = image.height() as f32;
    let inside: Vec<Keypoint> = keypoints
        .into_iter()
        .filter(|kp| {
            kp.x >= DESCRIPTOR_MARGIN
                && kp.y >= DESCRIPTOR_MARGIN
                && kp.x <= w - 1.0 - DESCRIPTOR_MARGIN
                && kp.y <= h - 1.0 - DESCRIPTOR_MARGIN
        })
        .collect();
    if inside.is_empty() {
        return Ok(DescriptorSet::empty(DESCRIPTOR_DIM));
    }
    describe(image, &inside)
}

/// Load a NIOK container: keypoints, descriptors and the optional weights
/// sidecar column.
pub fn load_niok(path: &Path) -> Result<(DescriptorSet, Option<Vec<f32>>), FeatureError> {
    let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = || FeatureError::BadContainer(path.to_path_buf());
    let trunc = || FeatureError::Truncated(path.to_path_buf());
    if bytes.len() < 17 || &bytes[0..4] != NIOK_MAGIC {
        return Err(bad());
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    if u32_at(4) != NIOK_VERSION {
        return Err(bad());
    }
    let n = u32_at(8) as usize;
    let d = u32_at(12) as usize;
    let has_weights = match bytes[16] {
        0 => false,
        1 => true,
        _ => return Err(bad()),
    };
    if d == 0 {
        return Err(bad());
    }
    let floats = n * 2 + n + n * d + if has_weights { n } else { 0 };
    let expected = 17 + floats * 4;
    if bytes.len() < expected {
        return Err(trunc());
    }
    let mut off = 17;
    let mut read_f32 = |off: &mut usize| -> f32 {
        let v = f32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
        *off += 4;
        v
    };
    let mut keypoints = Vec::with_capacity(n);
    for _ in 0..n {
        let x = read_f32(&mut off);
        let y = read_f32(&mut off);
        keypoints.push(Keypoint {
            x,
            y,
            response: 0.0,
        });
    }
    for kp in keypoints.iter_mut() {
        kp.response = read_f32(&mut off);
    }
    let mut desc = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        desc.push(read_f32(&mut off));
    }
    let weights = if has_weights {
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            w.push(read_f32(&mut off));
        }
        Some(w)
    } else {
        None
    };
    let set = DescriptorSet::new(keypoints, Descriptors::new(d, desc)?)?;
    Ok((set, weights))
}

/// Write a NIOK container.
pub fn save_niok(
    path: &Path,
    set: &DescriptorSet,
    weights: Option<&[f32]>,
) -> Result<(), FeatureError> {
    let n = set.len();
    let d = set.descriptors().dim();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(FeatureError::CountMismatch {
                keypoints: n,
                descriptors: w.len(),
            });
        }
    }
    let mut bytes = Vec::with_capacity(17 + (n * (3 + d)) * 4);
    bytes.extend_from_slice(NIOK_MAGIC);
    bytes.extend_from_slice(&NIOK_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.push(u8::from(weights.is_some()));
    for kp in set.keypoints() {
        bytes.extend_from_slice(&kp.x.to_le_bytes());
        bytes.extend_from_slice(&kp.y.to_le_bytes());
    }
    for kp in set.keypoints() {
        bytes.extend_from_slice(&kp.response.to_le_bytes());
    }
    for &v in set.descriptors().data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(w) = weights {
        for &v in w {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}
