use proptest::prelude::*;

use segtrack::consistency::{temporal_consistency_loss, warp, FlowField, SeedMap};
use segtrack::eval::{evaluate_sequence, motsa, smotsa};
use segtrack::mask::{format_line, parse_line, BBox, BinaryMask, Bitmap, InstanceObservation};
use segtrack::track::{assignment_cost, run_sequence, solve_assignment, TrackerConfig};
use segtrack::train::batch_hard_triplet_loss;

fn bitmap(max: u32) -> impl Strategy<Value = Bitmap> {
    (1..max, 1..max).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), (h * w) as usize).prop_map(move |bits| Bitmap::from_fn(h, w, |r, c| bits[(r * w + c) as usize]))
    })
}

fn pair_of_bitmaps(max: u32) -> impl Strategy<Value = (Bitmap, Bitmap)> {
    (1..max, 1..max).prop_flat_map(|(h, w)| {
        let n = (h * w) as usize;
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)).prop_map(move |(a, b)| {
            (
                Bitmap::from_fn(h, w, |r, c| a[(r * w + c) as usize]),
                Bitmap::from_fn(h, w, |r, c| b[(r * w + c) as usize]),
            )
        })
    })
}

fn dense_iou(a: &Bitmap, b: &Bitmap, h: u32, w: u32) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (a.get(r, c), b.get(r, c));
            i += (x && y) as u64;
            u += (x || y) as u64;
        }
    }
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

proptest! {
    #[test]
    fn rle_round_trip(bm in bitmap(24)) {
        let m = BinaryMask::encode(&bm);
        prop_assert_eq!(m.decode(), bm.clone());
        prop_assert_eq!(m.area() as usize, bm.count_ones());
        let total: u64 = m.counts().iter().map(|&c| c as u64).sum();
        prop_assert_eq!(total, m.height() as u64 * m.width() as u64);
        // canonical: no zero-length runs after the first
        prop_assert!(m.counts().iter().skip(1).all(|&c| c > 0));
    }

    #[test]
    fn iou_matches_dense_count((a, b) in pair_of_bitmaps(20)) {
        let (h, w) = (a.height, a.width);
        let (ma, mb) = (BinaryMask::encode(&a), BinaryMask::encode(&b));
        let iou = ma.iou(&mb).unwrap();
        prop_assert_eq!(iou, dense_iou(&a, &b, h, w));
        prop_assert_eq!(iou, mb.iou(&ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&iou));
        if !ma.is_empty() {
            prop_assert_eq!(ma.iou(&ma).unwrap(), 1.0);
        }
    }

    #[test]
    fn mask_line_round_trip(bm in bitmap(16), frame in 0u32..1000, track in proptest::option::of(0u64..1 << 40), class in 1u32..10) {
        let m = BinaryMask::encode(&bm);
        prop_assume!(!m.is_empty());
        let o = InstanceObservation::new(frame, class, m, track).unwrap();
        prop_assert_eq!(parse_line(&format_line(&o)).unwrap(), o);
    }

    #[test]
    fn enlarge_contains_and_grows(x0 in 0u32..50, y0 in 0u32..50, w in 1u32..30, h in 1u32..30, k1 in 0.0f64..1.0, dk in 0.0f64..1.0) {
        let (iw, ih) = (80, 80);
        let b = BBox::new(x0, y0, x0 + w, y0 + h);
        let e1 = b.enlarge(k1, iw, ih);
        let e2 = b.enlarge(k1 + dk, iw, ih);
        prop_assert!(e1.contains_box(&b));
        prop_assert!(e2.contains_box(&e1));
        prop_assert!(e2.x1 <= iw && e2.y1 <= ih);
    }

    #[test]
    fn assignment_beats_greedy_and_is_one_to_one(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let cost: Vec<f64> = (0..rows * cols).map(|i| (segtrack::exec::mix64(seed ^ i as u64) % 1000) as f64 / 10.0).collect();
        let pairs = solve_assignment(&cost, rows, cols);
        prop_assert_eq!(pairs.len(), rows.min(cols));
        let mut rs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut cs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rs.dedup();
        cs.sort();
        cs.dedup();
        prop_assert_eq!(rs.len(), pairs.len());
        prop_assert_eq!(cs.len(), pairs.len());
        // greedy by rows (rows <= cols) or by columns otherwise
        let mut greedy = 0.0;
        if rows <= cols {
            let mut used = vec![false; cols];
            for r in 0..rows {
                let c = (0..cols).filter(|&c| !used[c]).min_by(|&a, &b| cost[r * cols + a].total_cmp(&cost[r * cols + b])).unwrap();
                used[c] = true;
                greedy += cost[r * cols + c];
            }
        } else {
            let mut used = vec![false; rows];
            for c in 0..cols {
                let r = (0..rows).filter(|&r| !used[r]).min_by(|&a, &b| cost[a * cols + c].total_cmp(&cost[b * cols + c])).unwrap();
                used[r] = true;
                greedy += cost[r * cols + c];
            }
        }
        prop_assert!(assignment_cost(&cost, cols, &pairs) <= greedy + 1e-9);
    }

    #[test]
    fn triplet_loss_nonnegative_and_relabel_invariant(
        emb in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 6..12),
        shift in 1u64..1000,
    ) {
        let labels: Vec<u64> = (0..emb.len()).map(|i| (i % 3) as u64).collect();
        let a = batch_hard_triplet_loss(&emb, &labels, 0.2).unwrap();
        let relabeled: Vec<u64> = labels.iter().map(|l| l * 7 + shift).collect();
        let b = batch_hard_triplet_loss(&emb, &relabeled, 0.2).unwrap();
        prop_assert!(a.loss >= 0.0);
        prop_assert_eq!(a.loss, b.loss);
        prop_assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn warp_of_constant_is_constant(h in 1u32..8, w in 1u32..8, v in 0.0f64..1.0, flow in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 64)) {
        let m = SeedMap::filled(h, w, v);
        let f = FlowField::new(h, w, flow.iter().take((h * w) as usize).map(|&(a, b)| [a, b]).collect()).unwrap();
        let out = warp(&m, &f).unwrap();
        prop_assert!(out.data.iter().all(|&x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn consistency_loss_ignores_background(vals in prop::collection::vec(0.0f64..1.0, 128), bits in prop::collection::vec(any::<bool>(), 64), noise in 0.0f64..5.0) {
        prop_assume!(bits.iter().any(|&b| b));
        let a = SeedMap::new(8, 8, vals[..64].to_vec()).unwrap();
        let b = SeedMap::new(8, 8, vals[64..].to_vec()).unwrap();
        let fg = BinaryMask::from_pixels(8, 8, (0..64u32).filter(|&i| bits[i as usize]).map(|i| (i % 8, i / 8)));
        let l = temporal_consistency_loss(&a, &b, &fg).unwrap();
        prop_assert!(l >= 0.0);
        let c = SeedMap::new(8, 8, (0..64).map(|i| if bits[i] { vals[64 + i] } else { noise }).collect()).unwrap();
        prop_assert_eq!(temporal_consistency_loss(&a, &c, &fg).unwrap(), l);
    }
}

fn square(x: u32, y: u32, s: u32) -> BinaryMask {
    BinaryMask::from_pixels(32, 32, (x..x + s).flat_map(|i| (y..y + s).map(move |j| (i, j))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tracker_output_evaluates_consistently(n_frames in 1u32..12, drift in 0u32..3, seed in any::<u64>()) {
        // three disjoint squares drifting right; embeddings are per-object noise
        let mut frames = Vec::new();
        let mut gt = Vec::new();
        for f in 0..n_frames {
            let mut inst = Vec::new();
            for k in 0..3u32 {
                let m = square((f * drift) % 20, k * 10, 6);
                let o = InstanceObservation::new(f, 2, m, Some(k as u64)).unwrap();
                gt.push(o.clone());
                let e = vec![k as f64 * 3.0 + (segtrack::exec::mix64(seed ^ (f * 3 + k) as u64) % 100) as f64 / 1000.0];
                inst.push((o, e));
            }
            frames.push((f, inst));
        }
        let out = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        prop_assert_eq!(out.len(), gt.len());
        let c = evaluate_sequence(&gt, &out).unwrap();
        prop_assert_eq!(c.ids, 0);
        prop_assert!(smotsa(&c).unwrap() <= motsa(&c).unwrap());
        let self_eval = evaluate_sequence(&out, &out).unwrap();
        prop_assert_eq!(motsa(&self_eval).unwrap(), 1.0);
        prop_assert_eq!(smotsa(&self_eval).unwrap(), 1.0);
    }
}
