//! CLEAR-MOTS style scoring: MOTSA, sMOTSA and identity switches.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mask::InstanceObservation;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    /// Sum of IoUs over matched pairs.
    pub soft_tp: f64,
    pub gt_total: u64,
}

impl EvalCounts {
    pub fn merge(&mut self, other: &EvalCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.ids += other.ids;
        self.soft_tp += other.soft_tp;
        self.gt_total += other.gt_total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub gt: usize,
    pub hyp: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_hyp: Vec<usize>,
}

fn check_disjoint(set: &[&InstanceObservation], frame: u32) -> Result<()> {
    for (i, a) in set.iter().enumerate() {
        for b in &set[i + 1..] {
            if a.mask.intersection_area(&b.mask)? > 0 {
                return Err(Error::OverlappingMasks { frame });
            }
        }
    }
    Ok(())
}

/// Matches ground truth against hypotheses of one frame: a pair matches iff
/// its IoU exceeds 0.5, which is unique for non-overlapping masks.
pub fn match_frame(gt: &[&InstanceObservation], hyp: &[&InstanceObservation]) -> Result<FrameMatch> {
    let frame = gt.first().or(hyp.first()).map_or(0, |o| o.frame_index);
    check_disjoint(gt, frame)?;
    check_disjoint(hyp, frame)?;
    let mut out = FrameMatch::default();
    let mut hyp_used = vec![false; hyp.len()];
    for (g, go) in gt.iter().enumerate() {
        let mut found = None;
        for (h, ho) in hyp.iter().enumerate() {
            let iou = go.mask.iou(&ho.mask)?;
            if iou > 0.5 {
                found = Some((h, iou));
                break;
            }
        }
        match found {
            Some((h, iou)) => {
                hyp_used[h] = true;
                out.pairs.push(MatchedPair { gt: g, hyp: h, iou });
            }
            None => out.unmatched_gt.push(g),
        }
    }
    out.unmatched_hyp = (0..hyp.len()).filter(|&h| !hyp_used[h]).collect();
    Ok(out)
}

/// Per-frame matches with the track ids needed for identity bookkeeping.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameResult {
    /// `(gt track, hyp track, IoU)` for every matched pair.
    pub matched: Vec<(Option<u64>, Option<u64>, f64)>,
    pub false_negatives: u64,
    pub false_positives: u64,
}

/// Folds per-frame results in frame order. An identity switch is counted when
/// a ground-truth track is matched to a hypothesis id other than the one of
/// its most recent previous match.
pub fn accumulate(frames: &[FrameResult]) -> EvalCounts {
    let mut c = EvalCounts::default();
    let mut last: HashMap<u64, Option<u64>> = HashMap::new();
    for f in frames {
        c.tp += f.matched.len() as u64;
        c.fn_ += f.false_negatives;
        c.fp += f.false_positives;
        c.gt_total += f.matched.len() as u64 + f.false_negatives;
        for &(g, h, iou) in &f.matched {
            c.soft_tp += iou;
            if let Some(g) = g {
                if let Some(prev) = last.insert(g, h) {
                    if prev != h {
                        c.ids += 1;
                    }
                }
            }
        }
    }
    c
}

pub fn motsa(c: &EvalCounts) -> Result<f64> {
    if c.gt_total == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    Ok((c.tp as f64 - c.fp as f64 - c.ids as f64) / c.gt_total as f64)
}

pub fn smotsa(c: &EvalCounts) -> Result<f64> {
    if c.gt_total == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    Ok((c.soft_tp - c.fp as f64 - c.ids as f64) / c.gt_total as f64)
}

/// Scores one sequence given all of its ground-truth and hypothesis instances.
pub fn evaluate_sequence(gt: &[InstanceObservation], hyp: &[InstanceObservation]) -> Result<EvalCounts> {
    let mut frames: BTreeMap<u32, (Vec<&InstanceObservation>, Vec<&InstanceObservation>)> = BTreeMap::new();
    for o in gt {
        frames.entry(o.frame_index).or_default().0.push(o);
    }
    for o in hyp {
        frames.entry(o.frame_index).or_default().1.push(o);
    }
    let mut results = Vec::with_capacity(frames.len());
    for (_, (g, h)) in frames {
        let m = match_frame(&g, &h)?;
        results.push(FrameResult {
            matched: m
                .pairs
                .iter()
                .map(|p| (g[p.gt].track_id, h[p.hyp].track_id, p.iou))
                .collect(),
            false_negatives: m.unmatched_gt.len() as u64,
            false_positives: m.unmatched_hyp.len() as u64,
        });
    }
    Ok(accumulate(&results))
}

pub const REPORT_HEADER: &str = "sequence,sMOTSA,MOTSA,IDS,TP,FP,FN";

pub fn report_row(name: &str, c: &EvalCounts) -> Result<String> {
    Ok(format!(
        "{name},{:.6},{:.6},{},{},{},{}",
        smotsa(c)?,
        motsa(c)?,
        c.ids,
        c.tp,
        c.fp,
        c.fn_
    ))
}

/// CSV report with one row per sequence and, for several, an `OVERALL` row
/// over the pooled counts.
pub fn format_report(rows: &[(String, EvalCounts)]) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{REPORT_HEADER}").unwrap();
    let mut total = EvalCounts::default();
    for (name, c) in rows {
        writeln!(out, "{}", report_row(name, c)?).unwrap();
        total.merge(c);
    }
    if rows.len() > 1 {
        writeln!(out, "{}", report_row("OVERALL", &total)?).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn rect(x0: u32, y0: u32, w: u32, h: u32) -> BinaryMask {
        BinaryMask::from_pixels(20, 20, (x0..x0 + w).flat_map(|x| (y0..y0 + h).map(move |y| (x, y))))
    }

    fn obs(frame: u32, track: u64, m: BinaryMask) -> InstanceObservation {
        InstanceObservation::new(frame, 2, m, Some(track)).unwrap()
    }

    #[test]
    fn identical_sets_match_fully() {
        let a = obs(0, 1, rect(0, 0, 3, 3));
        let b = obs(0, 2, rect(5, 5, 3, 3));
        let m = match_frame(&[&a, &b], &[&a, &b]).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert!(m.pairs.iter().all(|p| p.iou == 1.0));
    }

    #[test]
    fn two_thirds_cover_matches() {
        let g = obs(0, 1, rect(0, 0, 3, 3));
        let h = obs(0, 1, rect(0, 0, 2, 3));
        let m = match_frame(&[&g], &[&h]).unwrap();
        assert!((m.pairs[0].iou - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn split_hypotheses_below_threshold() {
        // gt 8x1; each hyp covers half of it plus 2 pixels below: IoU 4/10
        let g = obs(0, 1, rect(0, 0, 8, 1));
        let half = |x0: u32| {
            let px: Vec<(u32, u32)> = rect(x0, 0, 4, 1).pixels().chain(rect(x0, 1, 2, 1).pixels()).collect();
            BinaryMask::from_pixels(20, 20, px)
        };
        let h1 = obs(0, 1, half(0));
        let h2 = obs(0, 2, half(4));
        assert!((g.mask.iou(&h1.mask).unwrap() - 0.4).abs() < 1e-12);
        let m = match_frame(&[&g], &[&h1, &h2]).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_gt.len(), 1);
        assert_eq!(m.unmatched_hyp.len(), 2);
    }

    #[test]
    fn overlapping_input_rejected() {
        let a = obs(4, 1, rect(0, 0, 3, 3));
        let b = obs(4, 2, rect(2, 2, 3, 3));
        assert!(matches!(match_frame(&[&a, &b], &[]), Err(Error::OverlappingMasks { frame: 4 })));
        assert!(matches!(match_frame(&[], &[&a, &b]), Err(Error::OverlappingMasks { frame: 4 })));
    }

    fn matched(frames: &[Option<u64>]) -> Vec<FrameResult> {
        frames
            .iter()
            .map(|h| match h {
                Some(h) => FrameResult {
                    matched: vec![(Some(7), Some(*h), 1.0)],
                    ..Default::default()
                },
                None => FrameResult {
                    false_negatives: 1,
                    ..Default::default()
                },
            })
            .collect()
    }

    #[test]
    fn identity_switch_rules() {
        assert_eq!(accumulate(&matched(&[Some(1); 10])).ids, 0);
        let mut seq = vec![Some(1); 5];
        seq.extend([Some(2); 5]);
        assert_eq!(accumulate(&matched(&seq)).ids, 1);
        let gap = [Some(1), None, None, None, Some(1)];
        let c = accumulate(&matched(&gap));
        assert_eq!(c.ids, 0);
        assert_eq!((c.tp, c.fn_, c.gt_total), (2, 3, 5));
    }

    #[test]
    fn metric_arithmetic() {
        let c = EvalCounts {
            tp: 8,
            soft_tp: 7.2,
            fp: 1,
            ids: 1,
            fn_: 2,
            gt_total: 10,
        };
        assert!((motsa(&c).unwrap() - 0.6).abs() < 1e-12);
        assert!((smotsa(&c).unwrap() - 0.52).abs() < 1e-12);
        let none = EvalCounts {
            fn_: 1,
            gt_total: 1,
            ..Default::default()
        };
        assert_eq!(motsa(&none).unwrap(), 0.0);
        assert!(matches!(motsa(&EvalCounts::default()), Err(Error::EmptyGroundTruth)));
        assert!(matches!(smotsa(&EvalCounts::default()), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let mut gt = Vec::new();
        for f in 0..5 {
            gt.push(obs(f, 1, rect(f, 0, 3, 3)));
            gt.push(obs(f, 2, rect(f, 10, 4, 4)));
        }
        let c = evaluate_sequence(&gt, &gt).unwrap();
        assert_eq!(motsa(&c).unwrap(), 1.0);
        assert_eq!(smotsa(&c).unwrap(), 1.0);
        assert_eq!(c.ids, 0);
        let relabeled: Vec<_> = gt
            .iter()
            .map(|o| InstanceObservation {
                track_id: o.track_id.map(|t| t * 100 + 3),
                ..o.clone()
            })
            .collect();
        assert_eq!(evaluate_sequence(&gt, &relabeled).unwrap(), c);
    }

    #[test]
    fn report_layout() {
        let c = EvalCounts {
            tp: 1,
            soft_tp: 1.0,
            gt_total: 1,
            ..Default::default()
        };
        let r = format_report(&[("a".into(), c), ("b".into(), c)]).unwrap();
        let lines: Vec<&str> = r.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines[1], "a,1.000000,1.000000,0,1,0,0");
        assert!(lines[3].starts_with("OVERALL,"));
    }
}
