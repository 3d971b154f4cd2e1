//! Run-length-encoded instance masks and box geometry.
//!
//! Masks use column-major order (pixel `(row, col)` sits at flat index
//! `col * height + row`) and the counts alternate zero-runs and one-runs,
//! always starting with a zero-run that may be empty.

mod lines;

pub use lines::{format_line, parse_line, read_mask_file, write_mask_file};

use crate::error::{Error, Result};

/// Dense row-major bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub height: u32,
    pub width: u32,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(height: u32, width: u32) -> Self {
        assert!(height > 0 && width > 0, "bitmap dimensions must be positive");
        Bitmap {
            height,
            width,
            data: vec![false; height as usize * width as usize],
        }
    }

    pub fn from_fn(height: u32, width: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut b = Bitmap::new(height, width);
        for r in 0..height {
            for c in 0..width {
                b.set(r, c, f(r, c));
            }
        }
        b
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[(row * self.width + col) as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, v: bool) {
        self.data[(row * self.width + col) as usize] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Run-length-encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl BinaryMask {
    /// Builds a mask from raw counts. Interior and trailing zero-runs are
    /// merged away so equal masks always compare equal.
    pub fn from_counts(height: u32, width: u32, counts: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::MalformedRle(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        let expected = height as u64 * width as u64;
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != expected {
            return Err(Error::MalformedRle(format!(
                "counts sum to {sum}, expected {expected}"
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            counts: canonicalize(&counts),
        })
    }

    pub fn empty(height: u32, width: u32) -> Self {
        BinaryMask {
            height,
            width,
            counts: vec![height * width],
        }
    }

    pub fn encode(dense: &Bitmap) -> Self {
        let (h, w) = (dense.height, dense.width);
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for col in 0..w {
            for row in 0..h {
                let v = dense.get(row, col);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        BinaryMask {
            height: h,
            width: w,
            counts,
        }
    }

    pub fn decode(&self) -> Bitmap {
        let mut out = Bitmap::new(self.height, self.width);
        for (start, len) in self.one_runs() {
            for idx in start..start + len {
                let (col, row) = (idx / self.height, idx % self.height);
                out.set(row, col, true);
            }
        }
        out
    }

    /// Builds a mask from a set of `(x, y)` foreground pixels.
    pub fn from_pixels(height: u32, width: u32, pixels: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut b = Bitmap::new(height, width);
        for (x, y) in pixels {
            b.set(y, x, true);
        }
        Self::encode(&b)
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground runs as `(flat_start, length)` in column-major order.
    pub fn one_runs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let mut pos = 0u32;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c;
            (i % 2 == 1 && c > 0).then_some((start, c))
        })
    }

    /// Foreground pixels as `(x, y)` in column-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let h = self.height;
        self.one_runs()
            .flat_map(move |(s, l)| (s..s + l).map(move |idx| (idx / h, idx % h)))
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = x * self.height + y;
        let mut pos = 0u32;
        for (i, &c) in self.counts.iter().enumerate() {
            if idx < pos + c {
                return i % 2 == 1;
            }
            pos += c;
        }
        false
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Number of shared foreground pixels, computed by merging run lists.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        self.same_dims(other)?;
        let a: Vec<(u32, u32)> = self.one_runs().collect();
        let b: Vec<(u32, u32)> = other.one_runs().collect();
        let (mut i, mut j, mut inter) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let (sa, ea) = (a[i].0, a[i].0 + a[i].1);
            let (sb, eb) = (b[j].0, b[j].0 + b[j].1);
            let lo = sa.max(sb);
            let hi = ea.min(eb);
            if hi > lo {
                inter += (hi - lo) as u64;
            }
            if ea <= eb {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(inter)
    }

    /// Mask IoU. Two empty masks have IoU 0.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(0.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Smallest half-open box containing every foreground pixel.
    pub fn tight_bbox(&self) -> Result<BBox> {
        let h = self.height;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for (start, len) in self.one_runs() {
            any = true;
            let end = start + len - 1;
            let (cs, rs) = (start / h, start % h);
            let (ce, re) = (end / h, end % h);
            x0 = x0.min(cs);
            x1 = x1.max(ce + 1);
            if cs != ce {
                // a run spanning columns touches every row in between
                y0 = 0;
                y1 = h;
            } else {
                y0 = y0.min(rs);
                y1 = y1.max(re + 1);
            }
        }
        if !any {
            return Err(Error::EmptyMask);
        }
        Ok(BBox { x0, y0, x1, y1 })
    }
}

/// Merges zero-length interior runs and drops trailing empty runs.
fn canonicalize(counts: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(counts.len());
    // parity of the run currently at the end of `out`
    let mut parity_ones = false;
    for (i, &c) in counts.iter().enumerate() {
        let is_ones = i % 2 == 1;
        if out.is_empty() {
            if is_ones {
                out.push(0);
                out.push(c);
                parity_ones = true;
            } else {
                out.push(c);
                parity_ones = false;
            }
            continue;
        }
        if c == 0 {
            continue;
        }
        if is_ones == parity_ones {
            *out.last_mut().unwrap() += c;
        } else {
            out.push(c);
            parity_ones = is_ones;
        }
    }
    while out.len() > 1 && *out.last().unwrap() == 0 {
        out.pop();
    }
    if out.is_empty() {
        out.push(0);
    }
    out
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 < x1 && y0 < y1);
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Grows the box by `k * width` horizontally and `k * height` vertically on
    /// each side, then clips to the image.
    pub fn enlarge(&self, k: f64, image_width: u32, image_height: u32) -> BBox {
        assert!(k >= 0.0, "enlargement factor must be non-negative");
        let dx = k * self.width() as f64;
        let dy = k * self.height() as f64;
        const EPS: f64 = 1e-9;
        let lo = |v: f64| (v + EPS).floor().max(0.0) as u32;
        let hi = |v: f64, limit: u32| ((v - EPS).ceil() as i64).clamp(0, limit as i64) as u32;
        BBox {
            x0: lo(self.x0 as f64 - dx).min(self.x0),
            y0: lo(self.y0 as f64 - dy).min(self.y0),
            x1: hi(self.x1 as f64 + dx, image_width).max(self.x1.min(image_width)),
            y1: hi(self.y1 as f64 + dy, image_height).max(self.y1.min(image_height)),
        }
    }
}

/// One segmented instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceObservation {
    pub frame_index: u32,
    pub class_id: u32,
    pub mask: BinaryMask,
    pub track_id: Option<u64>,
}

impl InstanceObservation {
    pub fn new(frame_index: u32, class_id: u32, mask: BinaryMask, track_id: Option<u64>) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(InstanceObservation {
            frame_index,
            class_id,
            mask,
            track_id,
        })
    }
}
