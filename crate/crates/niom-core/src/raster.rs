//! Float image rasters and file I/O.
//!
//! All pipeline math runs on `f32` channels in `[0, 1]`. The `image` crate is
//! used only at the file boundary (PNG; JPEG lives in the corruption module).

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("invalid PGM header in {0}")]
    BadPgm(PathBuf),
    #[error("unsupported image extension for {0} (expected .png or .pgm)")]
    UnsupportedFormat(PathBuf),
    #[error("raster dimensions must be at least 1x1")]
    EmptyRaster,
    #[error("pixel buffer length {len} does not match {width}x{height}")]
    LengthMismatch {
        len: usize,
        width: usize,
        height: usize,
    },
}

/// Single-channel float raster, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyRaster);
        }
        if data.len() != width * height {
            return Err(RasterError::LengthMismatch {
                len: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bilinear sample with edge clamping. Exact at integer lattice points and
    /// exactly constant over constant regions (nested-lerp formulation).
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        sample_bilinear_slice(&self.data, self.width, self.height, x, y)
    }
}

/// Interleaved RGB float raster, row-major, channels nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyRaster);
        }
        if data.len() != width * height * 3 {
            return Err(RasterError::LengthMismatch {
                len: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn channels(&self) -> &[f32] {
        &self.data
    }

    pub fn channels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Rec. 601 luma conversion.
    pub fn to_gray(&self) -> GrayRaster {
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            data.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
        }
        GrayRaster {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn from_gray(gray: &GrayRaster) -> Self {
        let mut data = Vec::with_capacity(gray.width * gray.height * 3);
        for &v in &gray.data {
            data.extend_from_slice(&[v, v, v]);
        }
        Self {
            width: gray.width,
            height: gray.height,
            data,
        }
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

pub(crate) fn sample_bilinear_slice(
    data: &[f32],
    width: usize,
    height: usize,
    x: f32,
    y: f32,
) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = lerp(data[y0 * width + x0], data[y0 * width + x1], fx);
    let bottom = lerp(data[y1 * width + x0], data[y1 * width + x1], fx);
    lerp(top, bottom, fy)
}

#[inline]
pub(crate) fn f32_to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load a PNG or binary PGM as an RGB raster with channels in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<RgbRaster, RasterError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let gray = load_pgm(path)?;
            Ok(RgbRaster::from_gray(&gray))
        }
        Some("png") => {
            let img = image::open(path).map_err(|source| RasterError::Decode {
                path: path.to_path_buf(),
                source,
            })?;
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb
                .as_raw()
                .iter()
                .map(|&v| f32::from(v) / 255.0)
                .collect();
            RgbRaster::new(w as usize, h as usize, data)
        }
        _ => Err(RasterError::UnsupportedFormat(path.to_path_buf())),
    }
}

/// Write an RGB raster as 8-bit PNG (values clamped to `[0, 1]`).
pub fn save_png(path: &Path, raster: &RgbRaster) -> Result<(), RasterError> {
    let mut img = image::RgbImage::new(raster.width as u32, raster.height as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        let base = i * 3;
        px.0 = [
            f32_to_u8(raster.data[base]),
            f32_to_u8(raster.data[base + 1]),
            f32_to_u8(raster.data[base + 2]),
        ];
    }
    img.save(path).map_err(|source| RasterError::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse a binary (P5) PGM with maxval 255.
pub fn load_pgm(path: &Path) -> Result<GrayRaster, RasterError> {
    let bytes = std::fs::read(path).map_err(|source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pgm(&bytes).ok_or_else(|| RasterError::BadPgm(path.to_path_buf()))
}

pub(crate) fn parse_pgm(bytes: &[u8]) -> Option<GrayRaster> {
    let mut pos = 0usize;

    let mut token = |pos: &mut usize| -> Option<Vec<u8>> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| bytes[start..*pos].to_vec())
    };

    if token(&mut pos)? != b"P5" {
        return None;
    }
    let width: usize = String::from_utf8(token(&mut pos)?).ok()?.parse().ok()?;
    let height: usize = String::from_utf8(token(&mut pos)?).ok()?.parse().ok()?;
    let maxval: usize = String::from_utf8(token(&mut pos)?).ok()?.parse().ok()?;
    if maxval != 255 || width == 0 || height == 0 {
        return None;
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let payload = bytes.get(pos..pos + width * height)?;
    let data = payload.iter().map(|&v| f32::from(v) / 255.0).collect();
    Some(GrayRaster {
        width,
        height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_is_exact_at_lattice_and_midpoints() {
        let g = GrayRaster::new(2, 2, vec![0.0, 1.0, 0.25, 0.75]).unwrap();
        assert_eq!(g.sample_bilinear(0.0, 0.0), 0.0);
        assert_eq!(g.sample_bilinear(1.0, 0.0), 1.0);
        assert_eq!(g.sample_bilinear(0.5, 0.0), 0.5);
    }

    #[test]
    fn bilinear_clamps_out_of_bounds() {
        let g = GrayRaster::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(g.sample_bilinear(-5.0, -5.0), 0.1);
        assert_eq!(g.sample_bilinear(10.0, 10.0), 0.4);
    }

    #[test]
    fn bilinear_constant_region_is_exact() {
        let g = GrayRaster::new(3, 3, vec![0.37; 9]).unwrap();
        assert_eq!(g.sample_bilinear(1.3, 0.7), 0.37);
    }

    #[test]
    fn pgm_roundtrip_values() {
        let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 10, 20, 30]);
        let g = parse_pgm(&bytes).unwrap();
        assert_eq!(g.width(), 3);
        assert_eq!(g.height(), 2);
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(g.get(2, 0), 1.0);
    }

    #[test]
    fn pgm_rejects_bad_magic_and_truncation() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\x00").is_none());
        assert!(parse_pgm(b"P5\n4 4\n255\n\x00\x00").is_none());
    }

    #[test]
    fn luma_matches_rec601() {
        let mut rgb = RgbRaster::zeros(1, 1);
        rgb.set(0, 0, [1.0, 0.0, 0.0]);
        assert!((rgb.to_gray().get(0, 0) - 0.299).abs() < 1e-7);
    }

    #[test]
    fn png_roundtrip(){
        let dir = std::env::temp_dir().join("niom_raster_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.png");
        let mut img = RgbRaster::zeros(4, 3);
        img.set(1, 2, [1.0, 0.5, 0.25]);
        save_png(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.width(), 4);
        assert_eq!(back.height(), 3);
        let px = back.get(1, 2);
        assert!((px[0] - 1.0).abs() < 1e-6);
        assert!((px[1] - 128.0 / 255.0).abs() < 1e-6);
    }
}
