//! Instance crops as unordered 2D point clouds.
//!
//! An instance's tight box is enlarged by `k` to give the crop. Pixels of the
//! instance's own segment form the foreground cloud; every other pixel of the
//! crop (background or other instances) forms the environment cloud. Both are
//! sampled uniformly with replacement and turned into per-point feature rows
//! (offset from the foreground center, color, and for environment points a
//! one-hot class), plus a sinusoidal embedding of the crop position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BBox, InstanceObservation};
use crate::raster::{ClassMap, RgbImage};

/// Width of the position embedding.
pub const POSITION_DIM: usize = 64;
/// Per-coordinate sinusoid pairs in the position embedding.
const POSITION_FREQS: usize = 8;
const POSITION_BASE: f64 = 10000.0;
/// Offset + color channels shared by both clouds.
pub const POINT_DIM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_fg: usize,
    pub n_env: usize,
    pub k: f64,
    /// Number of semantic classes including background.
    pub z: usize,
    pub rng_seed: u64,
    /// Divide offsets by the crop diagonal and colors by 255.
    pub normalize: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_fg: 1000,
            n_env: 500,
            k: 0.2,
            z: 3,
            rng_seed: 0,
            normalize: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fg < 1 || self.n_env < 1 {
            return Err(Error::InvalidConfig("n_fg and n_env must be >= 1".into()));
        }
        if self.z < 2 {
            return Err(Error::InvalidConfig("z must be >= 2".into()));
        }
        if !(self.k >= 0.0) {
            return Err(Error::InvalidConfig("k must be >= 0".into()));
        }
        Ok(())
    }
}

/// Modalities to zero out at encoding time (ablation).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub zero_offset: bool,
    pub zero_color: bool,
    pub zero_category: bool,
    pub zero_position: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        zero_offset: false,
        zero_color: false,
        zero_category: false,
        zero_position: false,
    };
}

/// The pixels of one enlarged crop, cut out of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPatch {
    /// Enlarged, clipped crop box in image coordinates.
    pub crop: BBox,
    pub image_width: u32,
    pub image_height: u32,
    pub class_id: u32,
    rgb: Vec<u8>,
    classes: Vec<u8>,
    on_segment: Vec<bool>,
}

impl CropPatch {
    pub fn extract(image: &RgbImage, classes: &ClassMap, obs: &InstanceObservation, k: f64) -> Result<Self> {
        let (w, h) = (image.width, image.height);
        if classes.width != w || classes.height != h || obs.mask.width() != w || obs.mask.height() != h {
            return Err(Error::DimensionMismatch(format!(
                "image {w}x{h}, class map {}x{}, mask {}x{}",
                classes.width,
                classes.height,
                obs.mask.width(),
                obs.mask.height()
            )));
        }
        let crop = obs.mask.tight_bbox()?.enlarge(k, w, h);
        let area = (crop.width() * crop.height()) as usize;
        let mut rgb = Vec::with_capacity(area * 3);
        let mut cls = Vec::with_capacity(area);
        for y in crop.y0..crop.y1 {
            for x in crop.x0..crop.x1 {
                rgb.extend_from_slice(&image.get(x, y));
                cls.push(classes.get(x, y));
            }
        }
        let mut on_segment = vec![false; area];
        let cw = crop.width();
        for (x, y) in obs.mask.pixels() {
            // the tight box lies inside the crop, so every pixel is in range
            on_segment[((y - crop.y0) * cw + (x - crop.x0)) as usize] = true;
        }
        Ok(CropPatch {
            crop,
            image_width: w,
            image_height: h,
            class_id: obs.class_id,
            rgb,
            classes: cls,
            on_segment,
        })
    }

    fn local(&self, idx: usize) -> (u32, u32) {
        let cw = self.crop.width() as usize;
        (self.crop.x0 + (idx % cw) as u32, self.crop.y0 + (idx / cw) as u32)
    }

    fn rgb_at(&self, idx: usize) -> [u8; 3] {
        [self.rgb[idx * 3], self.rgb[idx * 3 + 1], self.rgb[idx * 3 + 2]]
    }

    /// Draws the foreground and environment clouds. Deterministic in `seed`.
    pub fn sample(&self, n_fg: usize, n_env: usize, seed: u64) -> PointCloudPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut fg_idx, mut env_idx) = (Vec::new(), Vec::new());
        for (i, &on) in self.on_segment.iter().enumerate() {
            if on {
                fg_idx.push(i);
            } else {
                env_idx.push(i);
            }
        }
        assert!(!fg_idx.is_empty(), "crop extracted from a non-empty mask");
        let foreground: Vec<FgPoint> = (0..n_fg)
            .map(|_| {
                let i = fg_idx[rng.random_range(0..fg_idx.len())];
                let (u, v) = self.local(i);
                FgPoint { u, v, rgb: self.rgb_at(i) }
            })
            .collect();
        let env_degenerate = env_idx.is_empty();
        let environment: Vec<EnvPoint> = if env_degenerate {
            // sentinel: top-left crop pixel, repeated
            let (u, v) = self.local(0);
            let p = EnvPoint {
                u,
                v,
                rgb: self.rgb_at(0),
                class_id: self.classes[0] as u32,
            };
            vec![p; n_env]
        } else {
            (0..n_env)
                .map(|_| {
                    let i = env_idx[rng.random_range(0..env_idx.len())];
                    let (u, v) = self.local(i);
                    EnvPoint {
                        u,
                        v,
                        rgb: self.rgb_at(i),
                        class_id: self.classes[i] as u32,
                    }
                })
                .collect()
        };
        let n = foreground.len() as f64;
        let (su, sv) = foreground
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p.u as f64, b + p.v as f64));
        PointCloudPair {
            foreground,
            environment,
            center: (su / n, sv / n),
            crop: self.crop,
            image_width: self.image_width,
            image_height: self.image_height,
            env_degenerate,
        }
    }

    pub fn is_on_segment(&self, x: u32, y: u32) -> bool {
        self.crop.contains_point(x, y)
            && self.on_segment[((y - self.crop.y0) * self.crop.width() + (x - self.crop.x0)) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FgPoint {
    pub u: u32,
    pub v: u32,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvPoint {
    pub u: u32,
    pub v: u32,
    pub rgb: [u8; 3],
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudPair {
    pub foreground: Vec<FgPoint>,
    pub environment: Vec<EnvPoint>,
    /// Mean of the sampled foreground coordinates.
    pub center: (f64, f64),
    pub crop: BBox,
    pub image_width: u32,
    pub image_height: u32,
    /// Set when the crop had no pixel off the segment and the environment
    /// cloud is a repeated sentinel.
    pub env_degenerate: bool,
}

/// Cuts the crop for `obs` out of the frame and samples both clouds.
pub fn sample_points(
    image: &RgbImage,
    classes: &ClassMap,
    obs: &InstanceObservation,
    cfg: &SamplerConfig,
) -> Result<PointCloudPair> {
    if obs.mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let patch = CropPatch::extract(image, classes, obs, cfg.k)?;
    Ok(patch.sample(cfg.n_fg, cfg.n_env, cfg.rng_seed))
}

/// Offsets of every point from the foreground center, optionally scaled by the
/// crop diagonal.
pub fn encode_offsets(pc: &PointCloudPair, normalize: bool) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let (cu, cv) = pc.center;
    let scale = if normalize { 1.0 / pc.crop.diagonal() } else { 1.0 };
    let off = |u: u32, v: u32| [(u as f64 - cu) * scale, (v as f64 - cv) * scale];
    (
        pc.foreground.iter().map(|p| off(p.u, p.v)).collect(),
        pc.environment.iter().map(|p| off(p.u, p.v)).collect(),
    )
}

/// One-hot rows (`n_env x z`, row-major) for the environment classes.
pub fn encode_category(pc: &PointCloudPair, z: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; pc.environment.len() * z];
    for (i, p) in pc.environment.iter().enumerate() {
        if p.class_id < 1 || p.class_id as usize > z {
            return Err(Error::ClassOutOfRange { class: p.class_id, z });
        }
        out[i * z + p.class_id as usize - 1] = 1.0;
    }
    Ok(out)
}

/// Sinusoidal embedding of the box normalized by image size. Each of the four
/// coordinates expands to interleaved `(sin, cos)` pairs over 8 wavelengths.
pub fn encode_position(b: &BBox, image_width: u32, image_height: u32) -> [f64; POSITION_DIM] {
    let coords = [
        b.x0 as f64 / image_width as f64,
        b.y0 as f64 / image_height as f64,
        b.x1 as f64 / image_width as f64,
        b.y1 as f64 / image_height as f64,
    ];
    let mut out = [0.0; POSITION_DIM];
    for (c, &p) in coords.iter().enumerate() {
        for j in 0..POSITION_FREQS {
            let freq = POSITION_BASE.powf(-(2.0 * j as f64) / (2 * POSITION_FREQS) as f64);
            let base = c * 2 * POSITION_FREQS + 2 * j;
            out[base] = (p * freq).sin();
            out[base + 1] = (p * freq).cos();
        }
    }
    out
}

/// Network input for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTensors {
    pub n_fg: usize,
    pub n_env: usize,
    pub z: usize,
    /// `n_fg x 5`: offset, color.
    pub fg: Vec<f64>,
    /// `n_env x (5 + z)`: offset, color, one-hot class.
    pub env: Vec<f64>,
    pub position: [f64; POSITION_DIM],
}

impl ModalityTensors {
    pub fn env_dim(&self) -> usize {
        POINT_DIM + self.z
    }
}

pub fn encode(pc: &PointCloudPair, z: usize, normalize: bool, ablation: Ablation) -> Result<ModalityTensors> {
    let (fg_off, env_off) = encode_offsets(pc, normalize);
    let onehot = encode_category(pc, z)?;
    let cscale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let color = |rgb: [u8; 3]| rgb.map(|c| c as f64 * cscale);
    let mut fg = Vec::with_capacity(pc.foreground.len() * POINT_DIM);
    for (p, o) in pc.foreground.iter().zip(&fg_off) {
        push_point(&mut fg, o, color(p.rgb), ablation);
    }
    let ed = POINT_DIM + z;
    let mut env = Vec::with_capacity(pc.environment.len() * ed);
    for (i, (p, o)) in pc.environment.iter().zip(&env_off).enumerate() {
        push_point(&mut env, o, color(p.rgb), ablation);
        if ablation.zero_category {
            env.extend(std::iter::repeat_n(0.0, z));
        } else {
            env.extend_from_slice(&onehot[i * z..(i + 1) * z]);
        }
    }
    let position = if ablation.zero_position {
        [0.0; POSITION_DIM]
    } else {
        encode_position(&pc.crop, pc.image_width, pc.image_height)
    };
    Ok(ModalityTensors {
        n_fg: pc.foreground.len(),
        n_env: pc.environment.len(),
        z,
        fg,
        env,
        position,
    })
}

fn push_point(out: &mut Vec<f64>, offset: &[f64; 2], color: [f64; 3], ablation: Ablation) {
    if ablation.zero_offset {
        out.extend_from_slice(&[0.0, 0.0]);
    } else {
        out.extend_from_slice(offset);
    }
    if ablation.zero_color {
        out.extend_from_slice(&[0.0; 3]);
    } else {
        out.extend_from_slice(&color);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn frame(w: u32, h: u32) -> (RgbImage, ClassMap) {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.put(x, y, [(x * 10) as u8, (y * 10) as u8, 7]);
            }
        }
        (img, ClassMap::filled(w, h, 1))
    }

    fn obs(w: u32, h: u32, px: &[(u32, u32)]) -> InstanceObservation {
        InstanceObservation::new(0, 2, BinaryMask::from_pixels(h, w, px.iter().copied()), None).unwrap()
    }

    #[test]
    fn single_pixel_segment() {
        let (img, cls) = frame(10, 10);
        let o = obs(10, 10, &[(4, 6)]);
        let cfg = SamplerConfig { n_fg: 4, n_env: 3, ..Default::default() };
        let pc = sample_points(&img, &cls, &o, &cfg).unwrap();
        assert_eq!(pc.foreground.len(), 4);
        assert!(pc.foreground.iter().all(|p| (p.u, p.v) == (4, 6)));
        assert_eq!(pc.center, (4.0, 6.0));
    }

    #[test]
    fn center_is_mean_of_samples() {
        let (img, cls) = frame(5, 5);
        let o = obs(5, 5, &[(0, 0), (2, 2)]);
        let cfg = SamplerConfig { n_fg: 200, n_env: 10, ..Default::default() };
        let pc = sample_points(&img, &cls, &o, &cfg).unwrap();
        let n0 = pc.foreground.iter().filter(|p| p.u == 0).count() as f64;
        let expected = 2.0 * (200.0 - n0) / 200.0;
        assert!((pc.center.0 - expected).abs() < 1e-12);
        assert!((pc.center.1 - expected).abs() < 1e-12);
        // an exactly balanced draw lands on (1, 1)
        let balanced = PointCloudPair {
            foreground: vec![
                FgPoint { u: 0, v: 0, rgb: [0; 3] },
                FgPoint { u: 2, v: 2, rgb: [0; 3] },
            ],
            ..pc.clone()
        };
        let (off, _) = encode_offsets(
            &PointCloudPair { center: (1.0, 1.0), ..balanced },
            false,
        );
        assert_eq!(off, vec![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn deterministic_sampling() {
        let (img, cls) = frame(20, 20);
        let o = obs(20, 20, &[(5, 5), (6, 5), (7, 8), (9, 9)]);
        let cfg = SamplerConfig { rng_seed: 42, ..Default::default() };
        let a = sample_points(&img, &cls, &o, &cfg).unwrap();
        let b = sample_points(&img, &cls, &o, &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample_points(&img, &cls, &o, &SamplerConfig { rng_seed: 43, ..cfg }).unwrap();
        assert_ne!(a.foreground, c.foreground);
    }

    #[test]
    fn environment_off_segment_inside_crop() {
        let (img, mut cls) = frame(30, 30);
        let px: Vec<(u32, u32)> = (10..20).flat_map(|x| (12..18).map(move |y| (x, y))).collect();
        for &(x, y) in &px {
            cls.put(x, y, 2);
        }
        let o = obs(30, 30, &px);
        let pc = sample_points(&img, &cls, &o, &SamplerConfig::default()).unwrap();
        for p in &pc.environment {
            assert!(pc.crop.contains_point(p.u, p.v));
            assert!(!o.mask.contains(p.u, p.v));
        }
        for p in &pc.foreground {
            assert!(o.mask.contains(p.u, p.v));
        }
        assert!(!pc.env_degenerate);
    }

    #[test]
    fn full_image_segment_flags_sentinel() {
        let (img, cls) = frame(3, 3);
        let px: Vec<(u32, u32)> = (0..3).flat_map(|x| (0..3).map(move |y| (x, y))).collect();
        let o = obs(3, 3, &px);
        let pc = sample_points(&img, &cls, &o, &SamplerConfig::default()).unwrap();
        assert!(pc.env_degenerate);
        assert_eq!(pc.environment.len(), 500);
    }

    #[test]
    fn offset_arithmetic() {
        let pc = PointCloudPair {
            foreground: vec![FgPoint { u: 5, v: 7, rgb: [0; 3] }],
            environment: vec![EnvPoint { u: 3, v: 4, rgb: [0; 3], class_id: 1 }],
            center: (3.0, 4.0),
            crop: BBox::new(0, 0, 10, 10),
            image_width: 10,
            image_height: 10,
            env_degenerate: false,
        };
        let (f, e) = encode_offsets(&pc, false);
        assert_eq!(f, vec![[2.0, 3.0]]);
        assert_eq!(e, vec![[0.0, 0.0]]);
    }

    #[test]
    fn offsets_translation_invariant() {
        let (img, cls) = frame(60, 60);
        let px = [(10, 10), (11, 10), (12, 13), (14, 11)];
        let shifted: Vec<(u32, u32)> = px.iter().map(|&(x, y)| (x + 10, y + 10)).collect();
        let cfg = SamplerConfig { rng_seed: 3, ..Default::default() };
        let a = sample_points(&img, &cls, &obs(60, 60, &px), &cfg).unwrap();
        let b = sample_points(&img, &cls, &obs(60, 60, &shifted), &cfg).unwrap();
        assert_eq!(encode_offsets(&a, true), encode_offsets(&b, true));
    }

    #[test]
    fn category_one_hot() {
        let mk = |c| EnvPoint { u: 0, v: 0, rgb: [0; 3], class_id: c };
        let pc = PointCloudPair {
            foreground: vec![],
            environment: vec![mk(2), mk(1), mk(3)],
            center: (0.0, 0.0),
            crop: BBox::new(0, 0, 1, 1),
            image_width: 1,
            image_height: 1,
            env_degenerate: false,
        };
        let oh = encode_category(&pc, 3).unwrap();
        assert_eq!(&oh[0..3], &[0.0, 1.0, 0.0]);
        for row in oh.chunks(3) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
        let bad = PointCloudPair { environment: vec![mk(4)], ..pc };
        assert!(matches!(encode_category(&bad, 3), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn position_embedding_shape() {
        let e = encode_position(&BBox::new(0, 0, 10, 10), 20, 20);
        assert_eq!(e.len(), 64);
        for j in 0..8 {
            assert_eq!(e[2 * j], 0.0);
            assert_eq!(e[2 * j + 1], 1.0);
        }
        let f = encode_position(&BBox::new(10, 0, 20, 10), 20, 20);
        assert!(e.iter().zip(&f).any(|(a, b)| (a - b).abs() > 1e-3));
    }
}
