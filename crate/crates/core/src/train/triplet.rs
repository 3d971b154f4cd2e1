//! Batch-hard triplet loss: for every anchor, the farthest same-label sample
//! and the closest different-label sample, hinged with a margin.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSelection {
    pub positive: usize,
    pub negative: usize,
    pub d_pos: f64,
    pub d_neg: f64,
    pub loss: f64,
}

impl AnchorSelection {
    pub fn active(&self) -> bool {
        self.loss > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct TripletLoss {
    /// Mean hinge over anchors that have at least one positive.
    pub loss: f64,
    /// Gradient with respect to each embedding.
    pub grads: Vec<Vec<f64>>,
    /// Per anchor; `None` when the anchor has no positive in the batch.
    pub selections: Vec<Option<AnchorSelection>>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pairwise Euclidean distances, row-major `n x n`.
pub fn distance_matrix(embeddings: &[Vec<f64>]) -> Vec<f64> {
    let n = embeddings.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(&embeddings[i], &embeddings[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

pub fn batch_hard_triplet_loss(embeddings: &[Vec<f64>], labels: &[u64], margin: f64) -> Result<TripletLoss> {
    let n = embeddings.len();
    assert_eq!(labels.len(), n);
    if n == 0 || labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleIdentityBatch);
    }
    let dim = embeddings[0].len();
    let dist = distance_matrix(embeddings);
    let mut selections = Vec::with_capacity(n);
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a * n + j];
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        selections.push(match (pos, neg) {
            (Some((p, dp)), Some((q, dn))) => Some(AnchorSelection {
                positive: p,
                negative: q,
                d_pos: dp,
                d_neg: dn,
                loss: (dp - dn + margin).max(0.0),
            }),
            _ => None,
        });
    }
    let anchors = selections.iter().flatten().count();
    let mut grads = vec![vec![0.0; dim]; n];
    if anchors == 0 {
        return Ok(TripletLoss { loss: 0.0, grads, selections });
    }
    let scale = 1.0 / anchors as f64;
    let mut total = 0.0;
    for (a, sel) in selections.iter().enumerate() {
        let Some(s) = sel else { continue };
        total += s.loss;
        if !s.active() {
            continue;
        }
        // d||a - b|| / da = (a - b) / ||a - b||, zero at coincidence
        let unit = |b: usize, d: f64| -> Vec<f64> {
            if d > 0.0 {
                (0..dim).map(|k| (embeddings[a][k] - embeddings[b][k]) / d).collect()
            } else {
                vec![0.0; dim]
            }
        };
        let up = unit(s.positive, s.d_pos);
        let un = unit(s.negative, s.d_neg);
        for k in 0..dim {
            grads[a][k] += scale * (up[k] - un[k]);
            grads[s.positive][k] -= scale * up[k];
            grads[s.negative][k] += scale * un[k];
        }
    }
    Ok(TripletLoss {
        loss: total * scale,
        grads,
        selections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inactive_hinge_gives_zero() {
        let e = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 0.0], vec![5.0, 0.0]];
        let out = batch_hard_triplet_loss(&e, &[1, 1, 2, 2], 0.2).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn hinge_arithmetic() {
        // anchor 0: positive at distance 1.0, negative at 0.5
        let e = vec![vec![0.0], vec![1.0], vec![-0.5]];
        let out = batch_hard_triplet_loss(&e, &[1, 1, 2], 0.2).unwrap();
        let s0 = out.selections[0].unwrap();
        assert_eq!((s0.positive, s0.negative), (1, 2));
        assert!((s0.loss - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_identity_rejected() {
        let e = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            batch_hard_triplet_loss(&e, &[3, 3], 0.2),
            Err(Error::SingleIdentityBatch)
        ));
    }

    /// Per-anchor loss equals the maximum hinge over every (positive, negative)
    /// pair, found by enumeration.
    #[test]
    fn hard_mining_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let ids = rng.random_range(2..5);
            let labels: Vec<u64> = (0..ids * 3).map(|i| (i / 3) as u64).collect();
            let e: Vec<Vec<f64>> = labels
                .iter()
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let m = rng.random_range(0.0..1.0);
            let out = batch_hard_triplet_loss(&e, &labels, m).unwrap();
            let mut total = 0.0;
            for a in 0..e.len() {
                let mut best = f64::NEG_INFINITY;
                for p in 0..e.len() {
                    for q in 0..e.len() {
                        if p == a || labels[p] != labels[a] || labels[q] == labels[a] {
                            continue;
                        }
                        let h = (euclidean(&e[a], &e[p]) - euclidean(&e[a], &e[q]) + m).max(0.0);
                        best = best.max(h);
                    }
                }
                assert!((out.selections[a].unwrap().loss - best).abs() < 1e-12);
                total += best;
            }
            assert!((out.loss - total / e.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<u64> = (0..12).map(|i| i / 3).collect();
        let relabeled: Vec<u64> = labels.iter().map(|l| 1000 - l * 7).collect();
        let e: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = batch_hard_triplet_loss(&e, &labels, 0.3).unwrap();
        let b = batch_hard_triplet_loss(&e, &relabeled, 0.3).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u64> = (0..9).map(|i| i / 3).collect();
        let e: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let out = batch_hard_triplet_loss(&e, &labels, 1.0).unwrap();
        let h = 1e-6;
        for i in 0..9 {
            for k in 0..3 {
                let mut ep = e.clone();
                ep[i][k] += h;
                let mut em = e.clone();
                em[i][k] -= h;
                let num = (batch_hard_triplet_loss(&ep, &labels, 1.0).unwrap().loss
                    - batch_hard_triplet_loss(&em, &labels, 1.0).unwrap().loss)
                    / (2.0 * h);
                assert!((num - out.grads[i][k]).abs() < 1e-6, "{i},{k}: {num} vs {}", out.grads[i][k]);
            }
        }
    }
}
