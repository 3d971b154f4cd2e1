use rand::Rng;

use super::db::CropDatabase;
use super::TrainConfig;
use crate::error::{Error, Result};

/// Three crops of one track, as indices into the track's crop list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub track: u64,
    pub entries: [usize; 3],
    /// Frame spacing; 0 when the track had no equally spaced triple and three
    /// consecutive crops were used instead.
    pub spacing: u32,
}

/// Feasible `(start entry, spacing)` pairs: frames `t, t+s, t+2s` all exist.
pub fn feasible_triples(frames: &[u32], spacing_min: u32, spacing_max: u32) -> Vec<(usize, u32, [usize; 3])> {
    let mut out = Vec::new();
    for (i, &t) in frames.iter().enumerate() {
        for s in spacing_min..=spacing_max {
            let find = |f: u32| frames.binary_search(&f).ok();
            if let (Some(b), Some(c)) = (find(t + s), find(t + 2 * s)) {
                out.push((i, s, [i, b, c]));
            }
        }
    }
    out
}

/// Draws `cfg.d` distinct tracks, each with three equally spaced crops.
pub fn sample_batch<R: Rng>(db: &CropDatabase, cfg: &TrainConfig, rng: &mut R) -> Result<Vec<BatchItem>> {
    let mut eligible = db.eligible_tracks();
    if eligible.len() < cfg.d {
        return Err(Error::InsufficientTracks {
            needed: cfg.d,
            available: eligible.len(),
        });
    }
    // partial Fisher-Yates
    for i in 0..cfg.d {
        let j = rng.random_range(i..eligible.len());
        eligible.swap(i, j);
    }
    eligible
        .into_iter()
        .take(cfg.d)
        .map(|track| {
            let entries = db.track(track).expect("eligible track exists");
            let frames: Vec<u32> = entries.iter().map(|e| e.frame_index).collect();
            let options = feasible_triples(&frames, cfg.spacing_min, cfg.spacing_max);
            Ok(if options.is_empty() {
                let i = rng.random_range(0..frames.len() - 2);
                BatchItem {
                    track,
                    entries: [i, i + 1, i + 2],
                    spacing: 0,
                }
            } else {
                let (_, s, e) = options[rng.random_range(0..options.len())];
                BatchItem {
                    track,
                    entries: e,
                    spacing: s,
                }
            })
        })
        .collect()
}
