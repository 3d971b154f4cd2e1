use std::collections::BTreeMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::mask::InstanceObservation;
use crate::pointcloud::CropPatch;

/// One training crop of one track.
#[derive(Debug, Clone)]
pub struct CropEntry {
    pub frame_index: u32,
    pub obs: InstanceObservation,
    pub patch: CropPatch,
}

/// All crops of all ground-truth tracks, keyed by a dataset-wide track id.
#[derive(Debug, Clone, Default)]
pub struct CropDatabase {
    pub z: usize,
    tracks: BTreeMap<u64, Vec<CropEntry>>,
}

/// Dataset-wide id for track `track` of sequence `seq`.
pub fn global_track_id(seq: usize, track: u64) -> u64 {
    ((seq as u64) << 32) | (track & 0xFFFF_FFFF)
}

impl CropDatabase {
    pub fn new(z: usize) -> Self {
        CropDatabase {
            z,
            tracks: BTreeMap::new(),
        }
    }

    /// Appends a crop; frames of one track must be strictly increasing.
    pub fn push(&mut self, track: u64, entry: CropEntry) -> Result<()> {
        let list = self.tracks.entry(track).or_default();
        if let Some(last) = list.last() {
            if entry.frame_index <= last.frame_index {
                return Err(Error::InvalidConfig(format!(
                    "track {track}: frame {} after {}",
                    entry.frame_index, last.frame_index
                )));
            }
        }
        list.push(entry);
        Ok(())
    }

    /// Extracts every ground-truth crop of every sequence.
    pub fn from_dataset(ds: &Dataset, k: f64) -> Result<Self> {
        let mut db = CropDatabase::new(ds.z());
        for (si, seq) in ds.sequences.iter().enumerate() {
            let frames: Vec<u32> = (0..seq.meta.frames).collect();
            let per_frame = exec::try_map_indexed(&frames, |_, &f| -> Result<Vec<(u64, CropEntry)>> {
                let frame = seq.load_frame(f)?;
                seq.instances_in_frame(f)
                    .map(|obs| {
                        let track = obs.track_id.ok_or_else(|| {
                            Error::InvalidConfig(format!("{}: ground truth without track id", seq.name))
                        })?;
                        let patch = CropPatch::extract(&frame.image, &frame.classes, obs, k)?;
                        Ok((
                            global_track_id(si, track),
                            CropEntry {
                                frame_index: f,
                                obs: obs.clone(),
                                patch,
                            },
                        ))
                    })
                    .collect()
            })?;
            for (track, entry) in per_frame.into_iter().flatten() {
                db.push(track, entry)?;
            }
        }
        Ok(db)
    }

    pub fn track(&self, id: u64) -> Option<&[CropEntry]> {
        self.tracks.get(&id).map(Vec::as_slice)
    }

    pub fn num_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn num_crops(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    /// Track ids with at least three crops, in ascending order.
    pub fn eligible_tracks(&self) -> Vec<u64> {
        self.tracks
            .iter()
            .filter(|(_, v)| v.len() >= 3)
            .map(|(&k, _)| k)
            .collect()
    }
}
