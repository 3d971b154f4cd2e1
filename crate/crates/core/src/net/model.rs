use std::cmp::Ordering;

use super::{Dense, Params, Scalar, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::pointcloud::{ModalityTensors, POINT_DIM};

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub n_fg: usize,
    pub n_env: usize,
    /// `fg_acts[0]` is the input, `fg_acts[l + 1]` the output of layer `l`.
    pub fg_acts: Vec<Vec<T>>,
    /// Outputs of each weight-head layer; the last one holds the scores.
    pub head_acts: Vec<Vec<T>>,
    /// Softmax point weights, non-negative and summing to one.
    pub weights: Vec<T>,
    pub env_acts: Vec<Vec<T>>,
    /// For each pooled channel, the environment point holding the maximum.
    pub argmax: Vec<usize>,
    /// `fusion_acts[0]` is `[M_F ++ M_E ++ M_P]`, the last entry the embedding.
    pub fusion_acts: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn embedding(&self) -> &[T] {
        self.fusion_acts.last().unwrap()
    }

    pub fn scores(&self) -> &[T] {
        self.head_acts.last().unwrap()
    }

    /// Pre-pool environment features, `n_env x width` row-major.
    pub fn env_features(&self) -> &[T] {
        self.env_acts.last().unwrap()
    }
}

#[inline]
fn leaky<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * T::of(LEAKY_SLOPE)
    }
}

fn dense_forward<T: Scalar>(l: &Dense<T>, x: &[T], n: usize, activate: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(n * l.out);
    for _ in 0..n {
        out.extend_from_slice(&l.b);
    }
    T::gemm_raw(n, l.inp, l.out, x, l.inp, 1, &l.w, l.out, 1, T::one(), &mut out, l.out, 1);
    if activate {
        for v in out.iter_mut() {
            *v = leaky(*v);
        }
    }
    out
}

/// Accumulates parameter gradients of one layer into `g` and returns the
/// gradient with respect to its input when `need_dx`. `dy` is overwritten.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Scalar>(
    l: &Dense<T>,
    g: &mut Dense<T>,
    x: &[T],
    y: &[T],
    dy: &mut [T],
    n: usize,
    activate: bool,
    need_dx: bool,
) -> Option<Vec<T>> {
    if activate {
        let slope = T::of(LEAKY_SLOPE);
        for (d, &a) in dy.iter_mut().zip(y) {
            if a <= T::zero() {
                *d = *d * slope;
            }
        }
    }
    T::gemm_raw(l.inp, n, l.out, x, 1, l.inp, dy, l.out, 1, T::one(), &mut g.w, l.out, 1);
    for row in dy.chunks_exact(l.out) {
        for (gb, &d) in g.b.iter_mut().zip(row) {
            *gb = *gb + d;
        }
    }
    need_dx.then(|| {
        let mut dx = vec![T::zero(); n * l.inp];
        T::gemm_raw(n, l.out, l.inp, dy, l.out, 1, &l.w, 1, l.out, T::zero(), &mut dx, l.inp, 1);
        dx
    })
}

fn mlp_forward<T: Scalar>(layers: &[Dense<T>], input: Vec<T>, n: usize) -> Vec<Vec<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for l in layers {
        let next = dense_forward(l, acts.last().unwrap(), n, true);
        acts.push(next);
    }
    acts
}

/// Backpropagates through a stack of activated per-point layers. Returns the
/// input gradient only when `need_dx`.
fn mlp_backward<T: Scalar>(
    layers: &[Dense<T>],
    grads: &mut [Dense<T>],
    acts: &[Vec<T>],
    mut dy: Vec<T>,
    n: usize,
    need_dx: bool,
) -> Option<Vec<T>> {
    for li in (0..layers.len()).rev() {
        let want = li > 0 || need_dx;
        dy = dense_backward(&layers[li], &mut grads[li], &acts[li], &acts[li + 1], &mut dy, n, true, want)?;
    }
    Some(dy)
}

/// Point indices sorted by row content, ties by index. Used as the summation
/// order when pooling, so results do not depend on how the points are listed.
pub fn canonical_order(rows: &[f64], width: usize) -> Vec<usize> {
    let n = rows.len() / width;
    let row = |i: usize| &rows[i * width..(i + 1) * width];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        row(a)
            .iter()
            .zip(row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Distinct rows in canonical order with their multiplicities.
fn dedup_rows(rows: &[f64], width: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out: Vec<f64> = Vec::with_capacity(rows.len());
    let mut counts: Vec<usize> = Vec::new();
    for i in canonical_order(rows, width) {
        let r = &rows[i * width..(i + 1) * width];
        match counts.last_mut() {
            Some(c) if &out[out.len() - width..] == r => *c += 1,
            _ => {
                out.extend_from_slice(r);
                counts.push(1);
            }
        }
    }
    (out, counts)
}

/// Softmax-weighted sum of point features (`n x dim`, row-major), summed in
/// `order`. Returns the weights and the pooled vector.
pub fn softmax_pool<T: Scalar>(features: &[T], dim: usize, logits: &[T], order: &[usize]) -> (Vec<T>, Vec<T>) {
    let n = logits.len();
    assert_eq!(features.len(), n * dim);
    assert_eq!(order.len(), n);
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let max = logits.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
    let exps: Vec<T> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total = order.iter().fold(T::zero(), |acc, &i| acc + exps[i]);
    let weights: Vec<T> = exps.iter().map(|&e| e / total).collect();
    let mut pooled = vec![T::zero(); dim];
    for &i in order {
        let w = weights[i];
        for (p, &f) in pooled.iter_mut().zip(row(i)) {
            *p = *p + w * f;
        }
    }
    (weights, pooled)
}

fn check_inputs<T: Scalar>(params: &Params<T>, mods: &ModalityTensors) -> Result<()> {
    let cfg = &params.config;
    if mods.z != cfg.z
        || mods.n_fg == 0
        || mods.n_env == 0
        || mods.fg.len() != mods.n_fg * POINT_DIM
        || mods.env.len() != mods.n_env * (POINT_DIM + cfg.z)
    {
        return Err(Error::ShapeMismatch(format!(
            "inputs n_fg={} n_env={} z={} do not fit network with z={}",
            mods.n_fg, mods.n_env, mods.z, cfg.z
        )));
    }
    Ok(())
}

fn head_forward<T: Scalar>(params: &Params<T>, feats: &[T], n: usize) -> Vec<Vec<T>> {
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(params.head.len());
    let last = params.head.len() - 1;
    for (i, l) in params.head.iter().enumerate() {
        let x = if i == 0 { feats } else { &acts[i - 1] };
        let y = dense_forward(l, x, n, i != last);
        acts.push(y);
    }
    acts
}

fn fusion_forward<T: Scalar>(params: &Params<T>, fused: Vec<T>) -> Vec<Vec<T>> {
    let mut acts = Vec::with_capacity(params.fusion.len() + 1);
    acts.push(fused);
    let last = params.fusion.len() - 1;
    for (i, l) in params.fusion.iter().enumerate() {
        let y = dense_forward(l, acts.last().unwrap(), 1, i != last);
        acts.push(y);
    }
    acts
}

fn cast_rows<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Runs the network on one instance.
pub fn forward<T: Scalar>(params: &Params<T>, mods: &ModalityTensors) -> Result<(Vec<T>, ForwardTrace<T>)> {
    check_inputs(params, mods)?;
    let cfg = &params.config;
    let (nf, ne) = (mods.n_fg, mods.n_env);

    let fg_acts = mlp_forward(&params.fg, cast_rows(&mods.fg), nf);
    let feats = fg_acts.last().unwrap();
    let fo = cfg.fg_out();
    let head_acts = head_forward(params, feats, nf);
    let order = canonical_order(&mods.fg, POINT_DIM);
    let (weights, m_f) = softmax_pool(feats, fo, head_acts.last().unwrap(), &order);

    let env_acts = mlp_forward(&params.env, cast_rows(&mods.env), ne);
    let eo = cfg.env_out();
    let env_feats = env_acts.last().unwrap();
    let mut m_e = vec![T::neg_infinity(); eo];
    let mut argmax = vec![0usize; eo];
    for i in 0..ne {
        let row = &env_feats[i * eo..(i + 1) * eo];
        for c in 0..eo {
            // strict comparison keeps the lowest index on ties
            if row[c] > m_e[c] {
                m_e[c] = row[c];
                argmax[c] = i;
            }
        }
    }

    let mut fused = m_f;
    fused.extend_from_slice(&m_e);
    fused.extend(mods.position.iter().map(|&v| T::of(v)));
    let fusion_acts = fusion_forward(params, fused);
    let out = fusion_acts.last().unwrap().clone();
    Ok((
        out,
        ForwardTrace {
            n_fg: nf,
            n_env: ne,
            fg_acts,
            head_acts,
            weights,
            env_acts,
            argmax,
            fusion_acts,
        },
    ))
}

/// Embedding only. Repeated points (sampling is with replacement) go through
/// the per-point layers once; a point seen `c` times gets `ln c` added to its
/// score, which leaves the softmax pooling unchanged. Agrees with [`forward`]
/// up to rounding.
pub fn embed<T: Scalar>(params: &Params<T>, mods: &ModalityTensors) -> Result<Vec<T>> {
    check_inputs(params, mods)?;
    let cfg = &params.config;
    let (fg, fg_counts) = dedup_rows(&mods.fg, POINT_DIM);
    let nf = fg_counts.len();
    let fg_acts = mlp_forward(&params.fg, cast_rows(&fg), nf);
    let feats = fg_acts.last().unwrap();
    let mut logits = head_forward(params, feats, nf).pop().unwrap();
    for (s, &c) in logits.iter_mut().zip(&fg_counts) {
        if c > 1 {
            *s = *s + T::of(c as f64).ln();
        }
    }
    let order: Vec<usize> = (0..nf).collect();
    let (_, m_f) = softmax_pool(feats, cfg.fg_out(), &logits, &order);

    let env_dim = POINT_DIM + cfg.z;
    let (env, env_counts) = dedup_rows(&mods.env, env_dim);
    let ne = env_counts.len();
    let env_acts = mlp_forward(&params.env, cast_rows(&env), ne);
    let eo = cfg.env_out();
    let mut m_e = vec![T::neg_infinity(); eo];
    for row in env_acts.last().unwrap().chunks_exact(eo) {
        for (m, &v) in m_e.iter_mut().zip(row) {
            *m = m.max(v);
        }
    }

    let mut fused = m_f;
    fused.extend_from_slice(&m_e);
    fused.extend(mods.position.iter().map(|&v| T::of(v)));
    Ok(fusion_forward(params, fused).pop().unwrap())
}

/// Gradients of `grad_out · M` with respect to every parameter.
pub fn backward<T: Scalar>(params: &Params<T>, trace: &ForwardTrace<T>, grad_out: &[T]) -> Params<T> {
    let cfg = &params.config;
    let mut g = Params::<T>::zeros(cfg);
    assert_eq!(grad_out.len(), cfg.embed_dim);
    let (nf, ne) = (trace.n_fg, trace.n_env);

    // fusion
    let mut d = grad_out.to_vec();
    let last_fusion = params.fusion.len() - 1;
    for li in (0..params.fusion.len()).rev() {
        d = dense_backward(
            &params.fusion[li],
            &mut g.fusion[li],
            &trace.fusion_acts[li],
            &trace.fusion_acts[li + 1],
            &mut d,
            1,
            li != last_fusion,
            true,
        )
        .unwrap();
    }
    let fo = cfg.fg_out();
    let eo = cfg.env_out();
    let d_mf = &d[..fo];
    let d_me = &d[fo..fo + eo];

    // environment: max pool routes each channel to its argmax point
    let mut d_env = vec![T::zero(); ne * eo];
    for c in 0..eo {
        d_env[trace.argmax[c] * eo + c] = d_me[c];
    }
    mlp_backward(&params.env, &mut g.env, &trace.env_acts, d_env, ne, false);

    // foreground: weighted sum and softmax
    let feats = trace.fg_acts.last().unwrap();
    let w = &trace.weights;
    let mut d_feats = vec![T::zero(); nf * fo];
    let mut dw = vec![T::zero(); nf];
    for i in 0..nf {
        let row = &feats[i * fo..(i + 1) * fo];
        let drow = &mut d_feats[i * fo..(i + 1) * fo];
        let mut acc = T::zero();
        for c in 0..fo {
            drow[c] = w[i] * d_mf[c];
            acc = acc + row[c] * d_mf[c];
        }
        dw[i] = acc;
    }
    let wdot = w.iter().zip(&dw).fold(T::zero(), |a, (&wi, &di)| a + wi * di);
    let mut dy: Vec<T> = w.iter().zip(&dw).map(|(&wi, &di)| wi * (di - wdot)).collect();

    let last_head = params.head.len() - 1;
    for li in (0..params.head.len()).rev() {
        let x = if li == 0 { feats } else { &trace.head_acts[li - 1] };
        dy = dense_backward(
            &params.head[li],
            &mut g.head[li],
            x,
            &trace.head_acts[li],
            &mut dy,
            nf,
            li != last_head,
            true,
        )
        .unwrap();
    }
    for (a, b) in d_feats.iter_mut().zip(&dy) {
        *a = *a + *b;
    }
    mlp_backward(&params.fg, &mut g.fg, &trace.fg_acts, d_feats, nf, false);
    g
}

/// Indices of the top `frac` fraction (rounded up) of points by weight;
/// equal weights keep the lower index first.
pub fn top_weighted_points<T: Scalar>(weights: &[T], frac: f64) -> Vec<usize> {
    let k = ((frac * weights.len() as f64).ceil() as usize).min(weights.len());
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].as_f64().total_cmp(&weights[a].as_f64()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Environment points most often holding a pooled maximum: counts how many
/// channels each point wins and returns up to `k` points, most frequent first.
pub fn critical_env_points(argmax: &[usize], k: usize) -> Vec<usize> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    let mut sorted = argmax.to_vec();
    sorted.sort_unstable();
    for idx in sorted {
        match counts.last_mut() {
            Some((i, c)) if *i == idx => *c += 1,
            _ => counts.push((idx, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.into_iter().take(k).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, NetConfig, NetworkParams};
    use crate::pointcloud::POSITION_DIM;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mods(nf: usize, ne: usize, z: usize, seed: u64) -> ModalityTensors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Vec::new();
        for _ in 0..ne {
            for _ in 0..POINT_DIM {
                env.push(rng.random_range(-1.0..1.0));
            }
            let c = rng.random_range(0..z);
            env.extend((0..z).map(|j| if j == c { 1.0 } else { 0.0 }));
        }
        let mut position = [0.0; POSITION_DIM];
        for p in position.iter_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        ModalityTensors {
            n_fg: nf,
            n_env: ne,
            z,
            fg: (0..nf * POINT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
            env,
            position,
        }
    }

    fn randomize_head(p: &mut NetworkParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in p.head.iter_mut() {
            for w in l.w.iter_mut().chain(l.b.iter_mut()) {
                *w = rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn output_dimension() {
        let p = init_params(0, &NetConfig::standard(3));
        let m = embed(&p, &random_mods(50, 20, 3, 1)).unwrap();
        assert_eq!(m.len(), 32);
        assert!(m.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatch() {
        let p = init_params(0, &NetConfig::tiny(3));
        assert!(matches!(embed(&p, &random_mods(4, 4, 4, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn uniform_weights_at_init() {
        let p = init_params(0, &NetConfig::tiny(3));
        let mods = random_mods(32, 16, 3, 2);
        let (_, trace) = forward(&p, &mods).unwrap();
        let fo = p.config.fg_out();
        let feats = trace.fg_acts.last().unwrap();
        for w in &trace.weights {
            assert_eq!(*w, 1.0 / 32.0);
        }
        for c in 0..fo {
            let mean: f64 = (0..32).map(|i| feats[i * fo + c]).sum::<f64>() / 32.0;
            assert!((trace.fusion_acts[0][c] - mean).abs() < 1e-14);
        }
    }

    fn permute(mods: &ModalityTensors, seed: u64) -> ModalityTensors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffle = |rows: &[f64], width: usize| -> Vec<f64> {
            let n = rows.len() / width;
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            idx.iter().flat_map(|&i| rows[i * width..(i + 1) * width].to_vec()).collect()
        };
        ModalityTensors {
            fg: shuffle(&mods.fg, POINT_DIM),
            env: shuffle(&mods.env, mods.env_dim()),
            ..mods.clone()
        }
    }

    #[test]
    fn point_order_invariance_is_bit_exact() {
        let mut p = init_params(3, &NetConfig::standard(3));
        randomize_head(&mut p, 9);
        let pf = p.cast::<f32>();
        let mods = random_mods(200, 100, 3, 4);
        let base = embed(&p, &mods).unwrap();
        let base32 = embed(&pf, &mods).unwrap();
        for s in 0..100 {
            let perm = permute(&mods, 100 + s);
            assert_eq!(embed(&p, &perm).unwrap(), base);
            assert_eq!(embed(&pf, &perm).unwrap(), base32);
        }
    }

    fn with_repeats(mods: &ModalityTensors, seed: u64) -> ModalityTensors {
        // resample rows with replacement so many points repeat
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |rows: &[f64], width: usize, n: usize| -> Vec<f64> {
            let m = rows.len() / width;
            (0..n)
                .flat_map(|_| {
                    let i = rng.random_range(0..m / 3);
                    rows[i * width..(i + 1) * width].to_vec()
                })
                .collect()
        };
        ModalityTensors {
            fg: pick(&mods.fg, POINT_DIM, mods.n_fg),
            env: pick(&mods.env, mods.env_dim(), mods.n_env),
            ..mods.clone()
        }
    }

    #[test]
    fn embed_agrees_with_forward_on_repeated_points() {
        let mut p = init_params(5, &NetConfig::standard(3));
        randomize_head(&mut p, 6);
        let mods = with_repeats(&random_mods(300, 150, 3, 7), 8);
        let fast = embed(&p, &mods).unwrap();
        let (full, _) = forward(&p, &mods).unwrap();
        for (a, b) in fast.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let pf = p.cast::<f32>();
        let base = embed(&pf, &mods).unwrap();
        for s in 0..20 {
            assert_eq!(embed(&pf, &permute(&mods, 200 + s)).unwrap(), base);
        }
    }

    #[test]
    fn softmax_pool_duplicate_point() {
        // splitting a point into two copies with logits lowered by ln 2 leaves
        // the pooled vector unchanged
        let feats = vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0];
        let logits = vec![0.3, -0.2, 1.1];
        let (_, base) = softmax_pool(&feats, 2, &logits, &[0, 1, 2]);
        let mut f2 = feats.clone();
        f2.extend_from_slice(&feats[2..4]);
        let l2 = vec![0.3, -0.2 - 2f64.ln(), 1.1, -0.2 - 2f64.ln()];
        let (w2, dup) = softmax_pool(&f2, 2, &l2, &[0, 1, 2, 3]);
        for (a, b) in base.iter().zip(&dup) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((w2.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((w2[1] - w2[3]).abs() < 1e-16);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut p = init_params(1, &NetConfig::tiny(3));
        randomize_head(&mut p, 2);
        let (_, trace) = forward(&p, &random_mods(32, 16, 3, 3)).unwrap();
        let g = backward(&p, &trace, &[0.0; 8]);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    /// Finite-difference check of every parameter for `L = c · M`.
    #[test]
    fn backward_matches_finite_differences() {
        let mut p = init_params(11, &NetConfig::tiny(3));
        randomize_head(&mut p, 12);
        let mods = random_mods(32, 16, 3, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |q: &NetworkParams| -> f64 {
            forward(q, &mods).unwrap().0.iter().zip(&c).map(|(m, k)| m * k).sum()
        };
        let (_, trace) = forward(&p, &mods).unwrap();
        let analytic = backward(&p, &trace, &c).flatten();
        let h = 1e-4;
        let n = p.num_params();
        let mut worst = 0.0f64;
        for idx in 0..n {
            let mut q = p.clone();
            set_flat(&mut q, idx, |v| v + h);
            let lp = loss(&q);
            set_flat(&mut q, idx, |v| v - 2.0 * h);
            let lm = loss(&q);
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    fn set_flat(p: &mut NetworkParams, mut idx: usize, f: impl Fn(f64) -> f64) {
        for t in p.tensors_mut() {
            if idx < t.len() {
                t[idx] = f(t[idx]);
                return;
            }
            idx -= t.len();
        }
        panic!("index out of range");
    }

    #[test]
    fn top_points_with_ties() {
        let w = vec![0.1f64; 25];
        assert_eq!(top_weighted_points(&w, 0.1), vec![0, 1, 2]);
        let w = vec![0.1, 0.5, 0.2, 0.5];
        assert_eq!(top_weighted_points(&w, 0.5), vec![1, 3]);
    }

    #[test]
    fn critical_points_by_frequency() {
        let am = vec![3, 3, 1, 7, 7, 7, 2, 9, 4, 4];
        assert_eq!(critical_env_points(&am, 5), vec![7, 3, 4, 1, 2]);
        assert!(critical_env_points(&[0, 0, 0], 5).len() <= 5);
    }
}
