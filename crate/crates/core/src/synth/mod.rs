//! Synthetic MOTS sequences: textured convex shapes moving linearly over a
//! low-contrast background, occluding each other by depth.

mod validate;

pub use validate::{validate_dataset, ValidationReport};

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_path, image_path, SequenceMeta};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, mix64, try_map_indexed};
use crate::mask::{write_mask_file, BinaryMask, InstanceObservation};
use crate::raster::{ClassMap, RgbImage};

/// Background class id.
pub const BACKGROUND: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub z: usize,
    /// Speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Half-extent range of the shapes in pixels.
    pub size_min: f64,
    pub size_max: f64,
    /// Base colors handed out to objects; empty selects the built-in palette.
    pub palette: Vec<[u8; 3]>,
    /// Amplitude of the per-object texture noise.
    pub texture_amplitude: u8,
    pub occlusion: bool,
    /// Chance per frame of an extra spawn while below `max_objects`.
    pub spawn_rate: f64,
    /// Visible instances smaller than this are left unannotated.
    pub min_visible_area: u64,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 160,
            height: 120,
            frames: 60,
            min_objects: 6,
            max_objects: 12,
            z: 3,
            speed_min: 2.0,
            speed_max: 8.0,
            size_min: 6.0,
            size_max: 14.0,
            palette: Vec::new(),
            texture_amplitude: 24,
            occlusion: true,
            spawn_rate: 0.1,
            min_visible_area: 16,
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("world config: {m}")));
        if self.width < 8 || self.height < 8 || self.frames == 0 {
            return bad("image and sequence must be non-trivial");
        }
        if self.min_objects < 1 || self.max_objects < self.min_objects {
            return bad("need 1 <= min_objects <= max_objects");
        }
        if self.z < 2 || self.z > 255 {
            return bad("z must be in 2..=255");
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return bad("speed range");
        }
        if !(1.0 <= self.size_min && self.size_min <= self.size_max) {
            return bad("size range");
        }
        if self.palette().len() < self.max_objects {
            return bad("palette smaller than max_objects");
        }
        if !(0.0..=1.0).contains(&self.spawn_rate) {
            return bad("spawn_rate must be a probability");
        }
        Ok(())
    }

    pub fn palette(&self) -> Vec<[u8; 3]> {
        if self.palette.is_empty() {
            default_palette()
        } else {
            self.palette.clone()
        }
    }
}

/// 36 saturated colors: 12 hues at three saturation/value levels.
pub fn default_palette() -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for (s, v) in [(0.95, 0.95), (0.6, 0.8), (0.9, 0.55)] {
        for i in 0..12 {
            out.push(hsv(i as f64 * 30.0 + 15.0 * (s < 0.9) as u8 as f64, s, v));
        }
    }
    out
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round() as u8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Ellipse { rx: f64, ry: f64 },
    Rect { hx: f64, hy: f64 },
    Diamond { hx: f64, hy: f64 },
}

impl Shape {
    fn half_extent(&self) -> (f64, f64) {
        match *self {
            Shape::Ellipse { rx, ry } => (rx, ry),
            Shape::Rect { hx, hy } | Shape::Diamond { hx, hy } => (hx, hy),
        }
    }

    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Ellipse { rx, ry } => (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0,
            Shape::Rect { hx, hy } => dx.abs() <= hx && dy.abs() <= hy,
            Shape::Diamond { hx, hy } => dx.abs() / hx + dy.abs() / hy <= 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Object {
    track_id: u64,
    class_id: u8,
    shape: Shape,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    depth: f64,
    color: [u8; 3],
    texture_seed: u64,
}

impl Object {
    /// Inclusive-exclusive pixel box `[x0, x1) x [y0, y1)` in image
    /// coordinates, possibly outside the image.
    fn pixel_box(&self) -> (i64, i64, i64, i64) {
        let (hx, hy) = self.shape.half_extent();
        (
            (self.x - hx - 0.5).floor() as i64,
            (self.y - hy - 0.5).floor() as i64,
            (self.x + hx + 0.5).ceil() as i64 + 1,
            (self.y + hy + 0.5).ceil() as i64 + 1,
        )
    }

    fn covers(&self, px: u32, py: u32) -> bool {
        self.shape.contains(px as f64 + 0.5 - self.x, py as f64 + 0.5 - self.y)
    }

    fn texel(&self, px: u32, py: u32, amplitude: u8) -> [u8; 3] {
        if amplitude == 0 {
            return self.color;
        }
        // texture is fixed to the object's frame, in 2x2 pixel cells
        let lx = ((px as f64 + 0.5 - self.x) / 2.0).floor() as i64;
        let ly = ((py as f64 + 0.5 - self.y) / 2.0).floor() as i64;
        let h = mix64(self.texture_seed ^ mix64((lx as u64) << 32 ^ (ly as u64 & 0xffff_ffff)));
        let span = 2 * amplitude as i64 + 1;
        let mut out = self.color;
        for (c, o) in out.iter_mut().enumerate() {
            let n = ((h >> (16 * c)) & 0xffff) as i64 % span - amplitude as i64;
            *o = (*o as i64 + n).clamp(0, 255) as u8;
        }
        out
    }
}

fn boxes_overlap(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn fully_outside(o: &Object, w: u32, h: u32) -> bool {
    let (x0, y0, x1, y1) = o.pixel_box();
    x1 <= 0 || y1 <= 0 || x0 >= w as i64 || y0 >= h as i64
}

struct World<'a> {
    cfg: &'a WorldConfig,
    rng: ChaCha8Rng,
    palette: Vec<[u8; 3]>,
    objects: Vec<Object>,
    next_track: u64,
}

impl<'a> World<'a> {
    fn new(cfg: &'a WorldConfig, seed: u64) -> Self {
        World {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            palette: cfg.palette(),
            objects: Vec::new(),
            next_track: 1,
        }
    }

    fn random_object(&mut self) -> Object {
        let cfg = self.cfg;
        let class_id = self.rng.random_range(2..=cfg.z as u8);
        let a = self.rng.random_range(cfg.size_min..=cfg.size_max);
        let b = self.rng.random_range(cfg.size_min..=cfg.size_max);
        // class picks the shape family, so category carries some signal
        let shape = match (class_id as usize + self.rng.random_range(0..2)) % 3 {
            0 => Shape::Rect { hx: a.max(b), hy: a.min(b) },
            1 => Shape::Ellipse { rx: a.min(b), ry: a.max(b) },
            _ => Shape::Diamond { hx: a, hy: b },
        };
        let used: Vec<[u8; 3]> = self.objects.iter().map(|o| o.color).collect();
        let free: Vec<[u8; 3]> = self.palette.iter().copied().filter(|c| !used.contains(c)).collect();
        let color = free[self.rng.random_range(0..free.len())];
        let speed = self.rng.random_range(cfg.speed_min..=cfg.speed_max);
        let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
        let track_id = self.next_track;
        self.next_track += 1;
        Object {
            track_id,
            class_id,
            shape,
            x: 0.0,
            y: 0.0,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
            depth: self.rng.random(),
            color,
            texture_seed: self.rng.random(),
        }
    }

    fn placeable(&self, o: &Object) -> bool {
        self.cfg.occlusion || self.objects.iter().all(|p| !boxes_overlap(p.pixel_box(), o.pixel_box()))
    }

    /// Adds an object anywhere in the image.
    fn spawn_inside(&mut self) {
        let mut o = self.random_object();
        for _ in 0..50 {
            o.x = self.rng.random_range(0.0..self.cfg.width as f64);
            o.y = self.rng.random_range(0.0..self.cfg.height as f64);
            if self.placeable(&o) {
                self.objects.push(o);
                return;
            }
        }
    }

    /// Adds an object straddling a random border, heading inward.
    fn spawn_at_border(&mut self) {
        let mut o = self.random_object();
        let (w, h) = (self.cfg.width as f64, self.cfg.height as f64);
        let speed = o.vx.hypot(o.vy).max(0.25);
        for _ in 0..50 {
            let side = self.rng.random_range(0..4);
            let along = self.rng.random_range(0.1..0.9);
            let spread = self.rng.random_range(-0.6..0.6);
            let (x, y, dir) = match side {
                0 => (0.0, along * h, 0.0),
                1 => (w, along * h, std::f64::consts::PI),
                2 => (along * w, 0.0, std::f64::consts::FRAC_PI_2),
                _ => (along * w, h, -std::f64::consts::FRAC_PI_2),
            };
            o.x = x;
            o.y = y;
            o.vx = speed * (dir + spread).cos();
            o.vy = speed * (dir + spread).sin();
            if self.placeable(&o) {
                self.objects.push(o);
                return;
            }
        }
    }

    fn advance(&mut self) {
        for i in 0..self.objects.len() {
            let mut moved = self.objects[i].clone();
            moved.x += moved.vx;
            moved.y += moved.vy;
            let blocked = !self.cfg.occlusion
                && self
                    .objects
                    .iter()
                    .enumerate()
                    .any(|(j, p)| j != i && boxes_overlap(p.pixel_box(), moved.pixel_box()));
            if blocked {
                self.objects[i].vx = -self.objects[i].vx;
                self.objects[i].vy = -self.objects[i].vy;
            } else {
                self.objects[i] = moved;
            }
        }
        let (w, h) = (self.cfg.width, self.cfg.height);
        self.objects.retain(|o| !fully_outside(o, w, h));
    }

    fn replenish(&mut self) {
        let mut tries = 0;
        while self.objects.len() < self.cfg.min_objects && tries < 20 {
            self.spawn_at_border();
            tries += 1;
        }
        if self.objects.len() < self.cfg.max_objects && self.rng.random_bool(self.cfg.spawn_rate) {
            self.spawn_at_border();
        }
    }

    /// Rasterizes the current state, nearer objects over farther ones.
    fn render(&self, frame: u32, seq_seed: u64) -> (RgbImage, ClassMap, Vec<InstanceObservation>) {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut image = RgbImage::new(w, h);
        let mut classes = ClassMap::filled(w, h, BACKGROUND);
        for y in 0..h {
            for x in 0..w {
                // large soft checkerboard plus fine noise, all near gray
                let check = (((x / 16) + (y / 16)) % 2) as i64 * 14;
                let n = (mix64(seq_seed ^ ((x as u64) << 20 | y as u64)) % 17) as i64 - 8;
                let f = (mix64(seq_seed ^ frame as u64 ^ ((x as u64) << 40 | (y as u64) << 20)) % 5) as i64 - 2;
                let g = (100 + check + n + f).clamp(0, 255) as u8;
                image.put(x, y, [g, g, g.saturating_add(6)]);
            }
        }
        let mut order: Vec<usize> = (0..self.objects.len()).collect();
        // far to near; near objects have small depth
        order.sort_by(|&a, &b| self.objects[b].depth.total_cmp(&self.objects[a].depth));
        let mut owner = vec![usize::MAX; (w * h) as usize];
        for &i in &order {
            let o = &self.objects[i];
            let (x0, y0, x1, y1) = o.pixel_box();
            for y in y0.max(0)..y1.min(h as i64) {
                for x in x0.max(0)..x1.min(w as i64) {
                    let (x, y) = (x as u32, y as u32);
                    if o.covers(x, y) {
                        owner[(y * w + x) as usize] = i;
                        image.put(x, y, o.texel(x, y, self.cfg.texture_amplitude));
                        classes.put(x, y, o.class_id);
                    }
                }
            }
        }
        let mut pixels: Vec<Vec<(u32, u32)>> = vec![Vec::new(); self.objects.len()];
        for x in 0..w {
            for y in 0..h {
                let i = owner[(y * w + x) as usize];
                if i != usize::MAX {
                    pixels[i].push((x, y));
                }
            }
        }
        let mut instances = Vec::new();
        for (i, px) in pixels.into_iter().enumerate() {
            let o = &self.objects[i];
            if (px.len() as u64) < self.cfg.min_visible_area.max(1) {
                continue;
            }
            let mask = BinaryMask::from_pixels(h, w, px);
            instances.push(InstanceObservation::new(frame, o.class_id as u32, mask, Some(o.track_id)).unwrap());
        }
        instances.sort_by_key(|o| o.track_id);
        (image, classes, instances)
    }
}

/// Everything needed to write one sequence.
pub struct GeneratedSequence {
    pub meta: SequenceMeta,
    pub frames: Vec<(RgbImage, ClassMap)>,
    pub instances: Vec<InstanceObservation>,
}

/// Simulates one sequence. Deterministic in `(cfg, seed)`.
pub fn simulate(cfg: &WorldConfig, name: &str, seed: u64) -> Result<GeneratedSequence> {
    cfg.validate()?;
    let mut world = World::new(cfg, seed);
    let initial = world.rng.random_range(cfg.min_objects..=cfg.max_objects);
    for _ in 0..initial {
        world.spawn_inside();
    }
    let mut frames = Vec::with_capacity(cfg.frames as usize);
    let mut instances = Vec::new();
    for f in 0..cfg.frames {
        if f > 0 {
            world.advance();
            world.replenish();
        }
        let (img, cls, inst) = world.render(f, seed);
        frames.push((img, cls));
        instances.extend(inst);
    }
    Ok(GeneratedSequence {
        meta: SequenceMeta {
            name: name.to_string(),
            width: cfg.width,
            height: cfg.height,
            frames: cfg.frames,
            z: cfg.z,
            seed,
        },
        frames,
        instances,
    })
}

#[derive(Serialize)]
struct MetaFile<'a> {
    #[serde(flatten)]
    meta: &'a SequenceMeta,
    world: &'a WorldConfig,
}

/// Generates one sequence into `dir`.
pub fn gen_sequence(cfg: &WorldConfig, dir: &Path, seed: u64) -> Result<()> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seq = simulate(cfg, &name, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (f, (img, cls)) in seq.frames.iter().enumerate() {
        img.write_ppm(&image_path(dir, f as u32))?;
        cls.write_raw(&class_path(dir, f as u32))?;
    }
    write_mask_file(&dir.join("instances.txt"), &seq.instances)?;
    let meta = serde_json::to_string_pretty(&MetaFile {
        meta: &seq.meta,
        world: cfg,
    })
    .expect("meta serializes");
    let path = dir.join("meta.json");
    fs::write(&path, meta + "\n").map_err(|e| Error::io(&path, e))
}

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:04}")
}

/// Generates sequences `first .. first + count` under `root`, in parallel.
/// Sequence `i` is seeded from `(cfg.rng_seed, i)`, so disjoint index ranges
/// give disjoint worlds.
pub fn gen_dataset(cfg: &WorldConfig, root: &Path, first: usize, count: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let indices: Vec<usize> = (first..first + count).collect();
    try_map_indexed(&indices, |_, &i| {
        let dir = root.join(sequence_name(i));
        gen_sequence(cfg, &dir, derive_seed(cfg.rng_seed, &[i as u64]))?;
        Ok(dir)
    })
}
