//! Dataset checker. Problems are collected as messages, never raised.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::{class_path, group_by_frame, image_path, SequenceMeta};
use crate::mask::read_mask_file;
use crate::raster::{ClassMap, RgbImage};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub sequences: usize,
    pub frames: u64,
    pub instances: u64,
    pub tracks: u64,
    /// Mean annotated instances per frame.
    pub density: f64,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_sequence(dir: &Path, report: &mut ValidationReport) {
    let name = dir.display().to_string();
    let mut bad = |msg: String| report.violations.push(format!("{name}: {msg}"));
    let meta_path = dir.join("meta.json");
    let text = match fs::read_to_string(&meta_path) {
        Ok(t) => t,
        Err(e) => return bad(format!("meta.json unreadable: {e}")),
    };
    let meta: SequenceMeta = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => return bad(format!("meta.json invalid: {e}")),
    };
    let occlusion = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.pointer("/world/occlusion").and_then(|o| o.as_bool()))
        .unwrap_or(true);
    let mut instances = match read_mask_file(&dir.join("instances.txt")) {
        Ok(i) => i,
        Err(e) => return bad(format!("{e}")),
    };
    if let Some(o) = instances.iter().find(|o| o.frame_index >= meta.frames) {
        return bad(format!("instance in frame {} beyond length {}", o.frame_index, meta.frames));
    }
    let ranges = group_by_frame(&mut instances, meta.frames);
    let mut track_class: BTreeMap<u64, u32> = BTreeMap::new();
    let (w, h) = (meta.width, meta.height);

    for f in 0..meta.frames {
        let classes = match RgbImage::read_ppm(&image_path(dir, f)).and_then(|img| {
            if (img.width, img.height) != (w, h) {
                return Err(crate::Error::DimensionMismatch(format!("image {}x{}", img.width, img.height)));
            }
            ClassMap::read_raw(&class_path(dir, f), w, h)
        }) {
            Ok(c) => Some(c),
            Err(e) => {
                bad(format!("frame {f}: {e}"));
                None
            }
        };
        let inst = &instances[ranges[f as usize].clone()];
        let mut ids = HashSet::new();
        for (i, o) in inst.iter().enumerate() {
            if (o.mask.height(), o.mask.width()) != (h, w) {
                bad(format!("frame {f}: mask {}x{} in {w}x{h} sequence", o.mask.width(), o.mask.height()));
                continue;
            }
            if o.class_id < 1 || o.class_id as usize > meta.z {
                bad(format!("frame {f}: class {} outside 1..={}", o.class_id, meta.z));
            }
            match o.track_id {
                None => bad(format!("frame {f}: instance without track id")),
                Some(t) => {
                    if !ids.insert(t) {
                        bad(format!("frame {f}: track {t} appears twice"));
                    }
                    let c = *track_class.entry(t).or_insert(o.class_id);
                    if c != o.class_id {
                        bad(format!("frame {f}: track {t} changes class {c} -> {}", o.class_id));
                    }
                }
            }
            if let Some(cm) = &classes {
                if let Some((x, y)) = o.mask.pixels().find(|&(x, y)| cm.get(x, y) as u32 != o.class_id) {
                    bad(format!("frame {f}: pixel ({x},{y}) of track {:?} has class {} in the class map", o.track_id, cm.get(x, y)));
                }
            }
            for p in &inst[i + 1..] {
                if o.mask.same_dims(&p.mask).is_err() {
                    continue;
                }
                if o.mask.intersection_area(&p.mask).unwrap_or(0) > 0 {
                    bad(format!("frame {f}: tracks {:?} and {:?} overlap", o.track_id, p.track_id));
                }
                if !occlusion {
                    if let (Ok(a), Ok(b)) = (o.mask.tight_bbox(), p.mask.tight_bbox()) {
                        if a.intersects(&b) {
                            bad(format!("frame {f}: boxes of tracks {:?} and {:?} intersect", o.track_id, p.track_id));
                        }
                    }
                }
            }
        }
    }
    report.sequences += 1;
    report.frames += meta.frames as u64;
    report.instances += instances.len() as u64;
    report.tracks += track_class.len() as u64;
}

/// Checks every sequence directory under `root` (or `root` itself if it is a
/// sequence).
pub fn validate_dataset(root: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let dirs: Vec<PathBuf> = if root.join("meta.json").is_file() {
        vec![root.to_path_buf()]
    } else {
        match fs::read_dir(root) {
            Ok(rd) => {
                let mut d: Vec<PathBuf> = rd
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir())
                    .collect();
                d.sort();
                d
            }
            Err(e) => {
                report.violations.push(format!("{}: {e}", root.display()));
                return report;
            }
        }
    };
    if dirs.is_empty() {
        report.violations.push(format!("{}: no sequences", root.display()));
    }
    for d in &dirs {
        check_sequence(d, &mut report);
    }
    if report.frames > 0 {
        report.density = report.instances as f64 / report.frames as f64;
    }
    report
}
