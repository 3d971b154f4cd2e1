//! Segments to tracks: embedding extraction per instance, then association.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, try_map_indexed};
use crate::mask::InstanceObservation;
use crate::net::{embed, forward, ForwardTrace, NetworkParams, Params};
use crate::pointcloud::{encode, Ablation, CropPatch, PointCloudPair, SamplerConfig};
use crate::raster::Frame;
use crate::track::{run_sequence, TrackerConfig};

/// Inference-side network plus sampling settings.
#[derive(Debug, Clone)]
pub struct Embedder {
    params: Params<f32>,
    pub sampler: SamplerConfig,
    pub ablation: Ablation,
}

impl Embedder {
    pub fn new(params: &NetworkParams, sampler: SamplerConfig, ablation: Ablation) -> Result<Self> {
        sampler.validate()?;
        if params.config.z != sampler.z {
            return Err(Error::VersionMismatch(format!(
                "network trained for z={}, data has z={}",
                params.config.z, sampler.z
            )));
        }
        Ok(Embedder {
            params: params.cast(),
            sampler,
            ablation,
        })
    }

    /// Samples, encodes and embeds one instance.
    pub fn embed_instance(&self, frame: &Frame, obs: &InstanceObservation, seed: u64) -> Result<Vec<f64>> {
        let s = &self.sampler;
        let patch = CropPatch::extract(&frame.image, &frame.classes, obs, s.k)?;
        let pc = patch.sample(s.n_fg, s.n_env, seed);
        let mods = encode(&pc, s.z, s.normalize, self.ablation)?;
        Ok(embed(&self.params, &mods)?.into_iter().map(|v| v as f64).collect())
    }

    /// Sampled clouds and the full forward trace, for inspection.
    pub fn inspect(&self, frame: &Frame, obs: &InstanceObservation, seed: u64) -> Result<(PointCloudPair, ForwardTrace<f32>)> {
        let s = &self.sampler;
        let patch = CropPatch::extract(&frame.image, &frame.classes, obs, s.k)?;
        let pc = patch.sample(s.n_fg, s.n_env, seed);
        let mods = encode(&pc, s.z, s.normalize, self.ablation)?;
        let (_, trace) = forward(&self.params, &mods)?;
        Ok((pc, trace))
    }

    /// Like [`Embedder::embed_instance`], also returning the wall time spent.
    pub fn embed_timed(&self, frame: &Frame, obs: &InstanceObservation, seed: u64) -> Result<(Vec<f64>, Duration)> {
        let t = Instant::now();
        let m = self.embed_instance(frame, obs, seed)?;
        Ok((m, t.elapsed()))
    }
}

/// Instances of one frame with their embeddings, as consumed by the tracker.
pub type FrameEmbeddings = (u32, Vec<(InstanceObservation, Vec<f64>)>);

/// Groups instances by frame, in increasing frame order, keeping input order
/// within a frame.
pub fn group_frames(instances: &[InstanceObservation]) -> Vec<(u32, Vec<InstanceObservation>)> {
    let mut by: BTreeMap<u32, Vec<InstanceObservation>> = BTreeMap::new();
    for o in instances {
        by.entry(o.frame_index).or_default().push(o.clone());
    }
    by.into_iter().collect()
}

/// Embeds every instance. Frames run in parallel; the sampling seed of the
/// `i`-th instance of frame `f` is derived from `(seed, f, i)` so results do
/// not depend on scheduling. Also returns the per-instance extraction times.
pub fn embed_frames<L>(
    embedder: &Embedder,
    frames: &[(u32, Vec<InstanceObservation>)],
    load_frame: L,
    seed: u64,
) -> Result<(Vec<FrameEmbeddings>, Vec<Duration>)>
where
    L: Fn(u32) -> Result<Frame> + Sync + Send,
{
    let per_frame = try_map_indexed(frames, |_, (f, inst)| {
        let frame = load_frame(*f)?;
        let mut out = Vec::with_capacity(inst.len());
        let mut times = Vec::with_capacity(inst.len());
        for (i, o) in inst.iter().enumerate() {
            let (m, t) = embedder.embed_timed(&frame, o, derive_seed(seed, &[*f as u64, i as u64]))?;
            out.push((o.clone(), m));
            times.push(t);
        }
        Ok::<_, Error>(((*f, out), times))
    })?;
    let mut frames_out = Vec::with_capacity(per_frame.len());
    let mut times = Vec::new();
    for (fe, t) in per_frame {
        frames_out.push(fe);
        times.extend(t);
    }
    Ok((frames_out, times))
}

/// Frames with empty embeddings, so similarity reduces to the IoU term.
pub fn without_embeddings(frames: &[(u32, Vec<InstanceObservation>)]) -> Vec<FrameEmbeddings> {
    frames
        .iter()
        .map(|(f, inst)| (*f, inst.iter().map(|o| (o.clone(), Vec::new())).collect()))
        .collect()
}

/// Tracks `detections` over the frames of `seq`. With no embedder the tracker
/// runs on mask IoU alone.
pub fn track_sequence(
    seq: &Sequence,
    detections: &[InstanceObservation],
    embedder: Option<&Embedder>,
    cfg: &TrackerConfig,
    seed: u64,
) -> Result<(Vec<InstanceObservation>, Vec<Duration>)> {
    let frames = group_frames(detections);
    let (input, times) = match embedder {
        Some(e) => embed_frames(e, &frames, |f| seq.load_frame(f), seed)?,
        None => (without_embeddings(&frames), Vec::new()),
    };
    Ok((run_sequence(&input, cfg)?, times))
}

pub fn median(times: &[Duration]) -> Option<Duration> {
    if times.is_empty() {
        return None;
    }
    let mut t = times.to_vec();
    t.sort();
    Some(t[t.len() / 2])
}
