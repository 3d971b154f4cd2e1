//! Full-pipeline gradient check: triplet loss over a batch of crops, through
//! the network, against central finite differences.
//!
//! The loss is piecewise smooth (leaky rectifiers, max pooling, hard mining,
//! hinge). A perturbation that moves the evaluation point across one of those
//! boundaries makes the central difference meaningless, so every evaluation
//! also records the discrete state (activation signs, pooling winners, mined
//! pairs, active hinges) and parameters whose perturbation changes it are
//! reported as skipped rather than compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch_hard_triplet_loss;
use crate::error::Result;
use crate::net::{backward, forward, init_params, NetConfig, NetworkParams};
use crate::pointcloud::{ModalityTensors, POINT_DIM, POSITION_DIM};

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub params: NetworkParams,
    pub inputs: Vec<ModalityTensors>,
    pub labels: Vec<u64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_rel_err: f64,
    /// Parameter with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
    /// Parameters whose perturbation crossed a non-differentiable boundary.
    pub skipped: usize,
    pub num_params: usize,
    pub max_abs_grad: f64,
}

/// Reference tiny configuration: 32 foreground and 16 environment points,
/// three identities with three crops each, widths 5→8→8, head 8→4→1.
pub fn reference_case(seed: u64) -> GradCheckCase {
    let z = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(seed, &NetConfig::tiny(z));
    // give the weighting head a non-zero output layer so every path carries
    // gradient
    if let Some(l) = params.head.last_mut() {
        for w in l.w.iter_mut().chain(l.b.iter_mut()) {
            *w = rng.random_range(-0.5..0.5);
        }
    }
    let (ids, per_id, nf, ne) = (3, 3, 32, 16);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for id in 0..ids {
        let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for _ in 0..per_id {
            let mut fg = Vec::with_capacity(nf * POINT_DIM);
            for _ in 0..nf {
                fg.push(rng.random_range(-0.5..0.5));
                fg.push(rng.random_range(-0.5..0.5));
                for c in base {
                    fg.push((c + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0));
                }
            }
            let mut env = Vec::with_capacity(ne * (POINT_DIM + z));
            for _ in 0..ne {
                for _ in 0..2 {
                    env.push(rng.random_range(-0.7..0.7));
                }
                for _ in 0..3 {
                    env.push(rng.random());
                }
                let cls = rng.random_range(0..z);
                env.extend((0..z).map(|j| if j == cls { 1.0 } else { 0.0 }));
            }
            let mut position = [0.0; POSITION_DIM];
            for p in position.iter_mut() {
                *p = rng.random_range(-1.0..1.0);
            }
            inputs.push(ModalityTensors {
                n_fg: nf,
                n_env: ne,
                z,
                fg,
                env,
                position,
            });
            labels.push(id as u64);
        }
    }
    GradCheckCase {
        params,
        inputs,
        labels,
        margin: 0.2,
    }
}

fn evaluate(params: &NetworkParams, case: &GradCheckCase) -> Result<(f64, Vec<u64>, Vec<Pass>)> {
    let mut embeddings = Vec::with_capacity(case.inputs.len());
    let mut traces = Vec::with_capacity(case.inputs.len());
    let mut signature: Vec<u64> = Vec::new();
    for mods in &case.inputs {
        let (m, trace) = forward(params, mods)?;
        let acts = trace
            .fg_acts
            .iter()
            .skip(1)
            .chain(trace.head_acts.iter().take(trace.head_acts.len() - 1))
            .chain(trace.env_acts.iter().skip(1))
            .chain(trace.fusion_acts.iter().skip(1).take(trace.fusion_acts.len() - 2));
        for layer in acts {
            signature.extend(layer.iter().map(|&v| (v > 0.0) as u64));
        }
        signature.extend(trace.argmax.iter().map(|&i| i as u64));
        embeddings.push(m);
        traces.push(trace);
    }
    let tl = batch_hard_triplet_loss(&embeddings, &case.labels, case.margin)?;
    for s in tl.selections.iter().flatten() {
        signature.extend([s.positive as u64, s.negative as u64, s.active() as u64]);
    }
    let grads = tl.grads;
    Ok((
        tl.loss,
        signature,
        traces.into_iter().zip(grads).collect(),
    ))
}

/// Forward trace of one crop and the loss gradient at its embedding.
type Pass = (crate::net::ForwardTrace<f64>, Vec<f64>);

/// Analytic loss gradient for the case.
pub fn analytic_gradient(case: &GradCheckCase) -> Result<(f64, NetworkParams)> {
    let (loss, _, passes) = evaluate(&case.params, case)?;
    let mut total = NetworkParams::zeros(&case.params.config);
    for (trace, g) in &passes {
        total.add_assign(&backward(&case.params, trace, g));
    }
    Ok((loss, total))
}

/// Compares analytic gradients of every parameter with central differences
/// of step `h`. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(case: &GradCheckCase, h: f64) -> Result<GradCheckReport> {
    let (loss, base_sig, _) = evaluate(&case.params, case)?;
    let (_, analytic) = analytic_gradient(case)?;
    let analytic = analytic.flatten();
    let mut probe = case.params.clone();
    let (mut worst, mut worst_index, mut checked, mut skipped) = (0.0f64, 0usize, 0usize, 0usize);
    let mut flat_index = 0usize;
    let n_tensors = probe.tensors().len();
    for t in 0..n_tensors {
        let len = probe.tensors()[t].len();
        for j in 0..len {
            let orig = probe.tensors()[t][j];
            probe.tensors_mut()[t][j] = orig + h;
            let (lp, sp, _) = evaluate(&probe, case)?;
            probe.tensors_mut()[t][j] = orig - h;
            let (lm, sm, _) = evaluate(&probe, case)?;
            probe.tensors_mut()[t][j] = orig;
            if sp != base_sig || sm != base_sig {
                skipped += 1;
            } else {
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic[flat_index];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                if rel > worst {
                    worst = rel;
                    worst_index = flat_index;
                }
                checked += 1;
            }
            flat_index += 1;
        }
    }
    Ok(GradCheckReport {
        loss,
        max_rel_err: worst,
        worst_index,
        checked,
        skipped,
        num_params: flat_index,
        max_abs_grad: analytic.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}
