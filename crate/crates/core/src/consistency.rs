//! Seed-map warping by optical flow and the foreground temporal consistency
//! loss.
//!
//! Raster files are little-endian: magic `b"SRST"`, then height, width and
//! channel count as `u32`, then `f64` samples row-major with channels
//! interleaved.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const RASTER_MAGIC: [u8; 4] = *b"SRST";

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMap {
    pub height: u32,
    pub width: u32,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl SeedMap {
    pub fn new(height: u32, width: u32, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != (height * width) as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} seed map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite seed value".into()));
        }
        Ok(SeedMap { height, width, data })
    }

    pub fn filled(height: u32, width: u32, v: f64) -> Self {
        SeedMap {
            height,
            width,
            data: vec![v; (height * width) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_raster(path, self.height, self.width, 1, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, w, data) = read_raster(path, 1)?;
        SeedMap::new(h, w, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: u32,
    pub width: u32,
    /// Row-major `(du, dv)` displacements in pixels.
    pub data: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn new(height: u32, width: u32, data: Vec<[f64; 2]>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != (height * width) as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} vectors for a {height}x{width} flow field",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite flow".into()));
        }
        Ok(FlowField { height, width, data })
    }

    pub fn uniform(height: u32, width: u32, du: f64, dv: f64) -> Self {
        FlowField {
            height,
            width,
            data: vec![[du, dv]; (height * width) as usize],
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let flat: Vec<f64> = self.data.iter().flatten().copied().collect();
        write_raster(path, self.height, self.width, 2, &flat)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, w, flat) = read_raster(path, 2)?;
        FlowField::new(h, w, flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

fn write_raster(path: &Path, h: u32, w: u32, channels: u32, data: &[f64]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + data.len() * 8);
    out.extend_from_slice(&RASTER_MAGIC);
    for v in [h, w, channels] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_raster(path: &Path, channels: u32) -> Result<(u32, u32, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || bytes[..4] != RASTER_MAGIC {
        return Err(corrupt("missing raster header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (h, w, c) = (word(0), word(1), word(2));
    if c != channels {
        return Err(corrupt(format!("{c} channels, expected {channels}")));
    }
    let n = h as usize * w as usize * c as usize;
    if bytes.len() != 16 + n * 8 {
        return Err(corrupt(format!("{} bytes for a {h}x{w}x{c} raster", bytes.len())));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((h, w, data))
}

/// Backward warp: `out(p) = prev(p - flow(p))`, bilinear, with samples
/// outside the map clamped to the nearest border pixel.
pub fn warp(prev: &SeedMap, flow: &FlowField) -> Result<SeedMap> {
    if (prev.height, prev.width) != (flow.height, flow.width) {
        return Err(Error::DimensionMismatch(format!(
            "seed map {}x{}, flow {}x{}",
            prev.height, prev.width, flow.height, flow.width
        )));
    }
    let (w, h) = (prev.width as usize, prev.height as usize);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        prev.data[y * w + x]
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let [du, dv] = flow.data[y * w + x];
            let sx = (x as f64 - du).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 - dv).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = if fx == 0.0 && fy == 0.0 {
                at(x0, y0)
            } else {
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                top * (1.0 - fy) + bottom * fy
            };
            data.push(v);
        }
    }
    Ok(SeedMap {
        height: prev.height,
        width: prev.width,
        data,
    })
}

/// Mean squared difference over the pixels of `fg`.
pub fn temporal_consistency_loss(warped: &SeedMap, current: &SeedMap, fg: &BinaryMask) -> Result<f64> {
    if (warped.height, warped.width) != (current.height, current.width)
        || (fg.height(), fg.width()) != (current.height, current.width)
    {
        return Err(Error::DimensionMismatch(format!(
            "warped {}x{}, current {}x{}, mask {}x{}",
            warped.height,
            warped.width,
            current.height,
            current.width,
            fg.height(),
            fg.width()
        )));
    }
    if fg.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    for (x, y) in fg.pixels() {
        let d = warped.get(x, y) - current.get(x, y);
        sum += d * d;
    }
    Ok(sum / fg.area() as f64)
}
