//! Online association of per-frame instances into tracks.

mod assign;

pub use assign::{assignment_cost, solve_assignment};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceObservation};
use crate::train::euclidean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Weight of mask IoU in the similarity.
    pub alpha: f64,
    /// Idle frames before a track retires.
    pub beta: u32,
    /// Pairs with similarity at or below this are never associated.
    pub gamma: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            alpha: 0.5,
            beta: 30,
            gamma: -8.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 1 || !self.alpha.is_finite() || self.gamma.is_nan() {
            return Err(Error::InvalidConfig(format!("bad tracker config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub latest_embedding: Vec<f64>,
    pub latest_mask: BinaryMask,
    pub last_update_frame: u32,
    pub history: Vec<(u32, BinaryMask)>,
}

/// `S = -|m_i - m_j| + alpha * IoU(s_i, s_j)`.
pub fn similarity(m_i: &[f64], m_j: &[f64], s_i: &BinaryMask, s_j: &BinaryMask, alpha: f64) -> Result<f64> {
    if m_i.len() != m_j.len() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings of length {} and {}",
            m_i.len(),
            m_j.len()
        )));
    }
    Ok(-euclidean(m_i, m_j) + alpha * s_i.iou(s_j)?)
}

#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    pub active: Vec<Track>,
    pub retired: Vec<Track>,
    pub next_track_id: u64,
    pub current_frame: Option<u32>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Associates the instances of `frame` with active tracks and returns the
    /// track id given to each instance, in input order.
    pub fn step(&mut self, frame: u32, instances: &[(InstanceObservation, Vec<f64>)], cfg: &TrackerConfig) -> Result<Vec<u64>> {
        if let Some(prev) = self.current_frame {
            if frame <= prev {
                return Err(Error::NonMonotonicFrame {
                    previous: prev as i64,
                    got: frame as i64,
                });
            }
        }
        self.current_frame = Some(frame);

        let (keep, gone): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| frame as u64 <= t.last_update_frame as u64 + cfg.beta as u64);
        self.active = keep;
        self.retired.extend(gone);

        let (rows, cols) = (self.active.len(), instances.len());
        let mut sim = Vec::with_capacity(rows * cols);
        for t in &self.active {
            for (obs, emb) in instances {
                sim.push(similarity(&t.latest_embedding, emb, &t.latest_mask, &obs.mask, cfg.alpha)?);
            }
        }
        let cost: Vec<f64> = sim.iter().map(|s| -s).collect();
        let mut ids: Vec<Option<u64>> = vec![None; cols];
        for (r, c) in solve_assignment(&cost, rows, cols) {
            if sim[r * cols + c] > cfg.gamma {
                let (obs, emb) = &instances[c];
                let t = &mut self.active[r];
                t.latest_embedding = emb.clone();
                t.latest_mask = obs.mask.clone();
                t.last_update_frame = frame;
                t.history.push((frame, obs.mask.clone()));
                ids[c] = Some(t.track_id);
            }
        }
        for (c, id) in ids.iter_mut().enumerate() {
            if id.is_none() {
                let (obs, emb) = &instances[c];
                let track_id = self.next_track_id;
                self.next_track_id += 1;
                self.active.push(Track {
                    track_id,
                    latest_embedding: emb.clone(),
                    latest_mask: obs.mask.clone(),
                    last_update_frame: frame,
                    history: vec![(frame, obs.mask.clone())],
                });
                *id = Some(track_id);
            }
        }
        Ok(ids.into_iter().map(|i| i.unwrap()).collect())
    }
}

/// Runs the tracker over frames given in increasing order and returns every
/// instance with its assigned track id.
pub fn run_sequence(frames: &[(u32, Vec<(InstanceObservation, Vec<f64>)>)], cfg: &TrackerConfig) -> Result<Vec<InstanceObservation>> {
    cfg.validate()?;
    let mut state = TrackerState::new();
    let mut out = Vec::new();
    for (frame, instances) in frames {
        let ids = state.step(*frame, instances, cfg)?;
        for ((obs, _), id) in instances.iter().zip(ids) {
            let mut o = obs.clone();
            o.frame_index = *frame;
            o.track_id = Some(id);
            out.push(o);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn square(x: u32, y: u32, s: u32) -> BinaryMask {
        BinaryMask::from_pixels(40, 40, (x..x + s).flat_map(|i| (y..y + s).map(move |j| (i, j))))
    }

    fn inst(frame: u32, mask: BinaryMask) -> InstanceObservation {
        InstanceObservation::new(frame, 2, mask, None).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let m = square(0, 0, 4);
        assert_eq!(similarity(&[1.0, 2.0], &[1.0, 2.0], &m, &m, 0.5).unwrap(), 0.5);
        let far = square(20, 20, 4);
        assert_eq!(similarity(&[0.0, 0.0], &[2.0, 0.0], &m, &far, 0.5).unwrap(), -2.0);
        // 4x5 against its 2x4 corner: IoU 8 / 20
        let c = BinaryMask::from_pixels(40, 40, (0..4).flat_map(|i| (0..5).map(move |j| (i, j))));
        let d = BinaryMask::from_pixels(40, 40, (0..2).flat_map(|i| (0..4).map(move |j| (i, j))));
        assert!((c.iou(&d).unwrap() - 0.4).abs() < 1e-12);
        let s = similarity(&[0.0], &[1.0], &c, &d, 0.5).unwrap();
        assert!((s + 0.8).abs() < 1e-12);
        let other = BinaryMask::from_pixels(10, 10, [(0, 0)]);
        assert!(similarity(&[0.0], &[0.0], &m, &other, 0.5).is_err());
        assert!(matches!(
            similarity(&[0.0], &[0.0, 1.0], &m, &m, 0.5),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gate_and_match() {
        let cfg = TrackerConfig::default();
        let mut st = TrackerState::new();
        let m = square(5, 5, 6);
        let first = st.step(0, &[(inst(0, m.clone()), vec![0.0])], &cfg).unwrap();
        let same = st.step(1, &[(inst(1, m.clone()), vec![0.0])], &cfg).unwrap();
        assert_eq!(first, same);
        // S = -9 at IoU 0: new id
        let far = square(30, 30, 4);
        let gated = st.step(2, &[(inst(2, far), vec![9.0])], &cfg).unwrap();
        assert_ne!(gated, first);
        assert_eq!(st.active.len(), 2);
    }

    #[test]
    fn idle_boundary() {
        let cfg = TrackerConfig::default();
        let m = square(5, 5, 6);
        let mut st = TrackerState::new();
        st.step(0, &[(inst(0, m.clone()), vec![0.0])], &cfg).unwrap();
        st.step(30, &[], &cfg).unwrap();
        assert_eq!(st.active.len(), 1);
        st.step(31, &[], &cfg).unwrap();
        assert!(st.active.is_empty());
        assert_eq!(st.retired.len(), 1);

        let mut st = TrackerState::new();
        let a = st.step(0, &[(inst(0, m.clone()), vec![0.0])], &cfg).unwrap();
        let b = st.step(30, &[(inst(30, m.clone()), vec![0.0])], &cfg).unwrap();
        assert_eq!(a, b);
        let c = st.step(61, &[(inst(61, m), vec![0.0])], &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frames_must_increase() {
        let cfg = TrackerConfig::default();
        let mut st = TrackerState::new();
        st.step(3, &[], &cfg).unwrap();
        assert!(matches!(
            st.step(3, &[], &cfg),
            Err(Error::NonMonotonicFrame { previous: 3, got: 3 })
        ));
    }

    #[test]
    fn infinite_gate_always_spawns() {
        let cfg = TrackerConfig {
            gamma: f64::INFINITY,
            ..Default::default()
        };
        let m = square(5, 5, 6);
        let frames: Vec<_> = (0..5).map(|f| (f, vec![(inst(f, m.clone()), vec![0.0])])).collect();
        let out = run_sequence(&frames, &cfg).unwrap();
        let mut ids: Vec<u64> = out.iter().map(|o| o.track_id.unwrap()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        let out = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        assert!(out.iter().all(|o| o.track_id == Some(0)));
    }

    #[test]
    fn empty_sequence() {
        let frames: Vec<(u32, Vec<(InstanceObservation, Vec<f64>)>)> = (0..4).map(|f| (f, vec![])).collect();
        assert!(run_sequence(&frames, &TrackerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn one_to_one_per_frame() {
        let cfg = TrackerConfig::default();
        let mut st = TrackerState::new();
        let masks = [square(0, 0, 5), square(10, 0, 5), square(20, 0, 5)];
        for f in 0..6u32 {
            let n = 1 + (f as usize % 3);
            let inst_list: Vec<_> = masks[..n]
                .iter()
                .enumerate()
                .map(|(i, m)| (inst(f, m.clone()), vec![i as f64]))
                .collect();
            let ids = st.step(f, &inst_list, &cfg).unwrap();
            let mut d = ids.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), ids.len());
        }
    }
}
