//! On-disk sequence layout:
//!
//! ```text
//! <root>/<seq>/image_%06d.ppm   RGB frames
//! <root>/<seq>/class_%06d.raw   8-bit class maps, row-major, no header
//! <root>/<seq>/instances.txt    ground truth in the mask line format
//! <root>/<seq>/meta.json        SequenceMeta
//! ```

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{read_mask_file, InstanceObservation};
use crate::raster::{ClassMap, Frame, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    /// Semantic classes including background (class 1).
    pub z: usize,
    pub seed: u64,
}

impl SequenceMeta {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
            path,
            reason: e.to_string(),
        })
    }
}

/// Reads frame `frame` of the sequence in `dir`, checking its dimensions.
pub fn load_frame(dir: &Path, meta: &SequenceMeta, frame: u32) -> Result<Frame> {
    let image = RgbImage::read_ppm(&image_path(dir, frame))?;
    let (w, h) = (meta.width, meta.height);
    if image.width != w || image.height != h {
        return Err(Error::CorruptFile {
            path: image_path(dir, frame),
            reason: format!("{}x{} image in {w}x{h} sequence", image.width, image.height),
        });
    }
    let classes = ClassMap::read_raw(&class_path(dir, frame), w, h)?;
    Ok(Frame { image, classes })
}

pub fn image_path(dir: &Path, frame: u32) -> PathBuf {
    dir.join(format!("image_{frame:06}.ppm"))
}

pub fn class_path(dir: &Path, frame: u32) -> PathBuf {
    dir.join(format!("class_{frame:06}.raw"))
}

/// Groups instances by frame. Returns, for each frame in `0..frames`, the
/// index range into `instances` after a stable sort by frame.
pub fn group_by_frame(instances: &mut [InstanceObservation], frames: u32) -> Vec<Range<usize>> {
    instances.sort_by_key(|o| o.frame_index);
    let mut ranges = Vec::with_capacity(frames as usize);
    let mut start = 0;
    for f in 0..frames {
        let mut end = start;
        while end < instances.len() && instances[end].frame_index == f {
            end += 1;
        }
        ranges.push(start..end);
        start = end;
    }
    ranges
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub dir: PathBuf,
    pub meta: SequenceMeta,
    /// Ground-truth instances sorted by frame.
    pub instances: Vec<InstanceObservation>,
    by_frame: Vec<Range<usize>>,
}

impl Sequence {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta = SequenceMeta::load(dir)?;
        let mut instances = read_mask_file(&dir.join("instances.txt"))?;
        if let Some(bad) = instances.iter().find(|o| o.frame_index >= meta.frames) {
            return Err(Error::CorruptFile {
                path: dir.join("instances.txt"),
                reason: format!("frame {} beyond sequence length {}", bad.frame_index, meta.frames),
            });
        }
        let by_frame = group_by_frame(&mut instances, meta.frames);
        Ok(Sequence {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| meta.name.clone()),
            dir: dir.to_path_buf(),
            meta,
            instances,
            by_frame,
        })
    }

    pub fn load_frame(&self, frame: u32) -> Result<Frame> {
        load_frame(&self.dir, &self.meta, frame)
    }

    pub fn instances_in_frame(&self, frame: u32) -> impl Iterator<Item = &InstanceObservation> {
        self.instances[self.by_frame[frame as usize].clone()].iter()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    /// Opens every subdirectory of `root` that has a `meta.json`, in name order.
    pub fn open(root: &Path) -> Result<Self> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("meta.json").is_file())
            .collect();
        dirs.sort();
        let sequences = dirs.iter().map(|d| Sequence::open(d)).collect::<Result<Vec<_>>>()?;
        if sequences.is_empty() {
            return Err(Error::InvalidConfig(format!("no sequences under {}", root.display())));
        }
        let z = sequences[0].meta.z;
        if let Some(s) = sequences.iter().find(|s| s.meta.z != z) {
            return Err(Error::InvalidConfig(format!(
                "sequence {} has z={}, expected {z}",
                s.name, s.meta.z
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            sequences,
        })
    }

    pub fn z(&self) -> usize {
        self.sequences[0].meta.z
    }
}
