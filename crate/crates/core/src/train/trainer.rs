use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_hard_triplet_loss, sample_batch, Adam, CropDatabase, TrainConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::net::{backward, forward, init_params, save_params, NetworkParams, Params};
use crate::pointcloud::{encode, Ablation};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Loss and summed parameter gradient of one batch. Crops run in `f32`;
/// gradients are accumulated in `f64` in crop order.
fn batch_gradient(
    params: &NetworkParams,
    db: &CropDatabase,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, NetworkParams)> {
    let batch = sample_batch(db, cfg, rng)?;
    let mut crops = Vec::with_capacity(batch.len() * 3);
    for item in &batch {
        let entries = db.track(item.track).expect("sampled track exists");
        for &e in &item.entries {
            crops.push((item.track, &entries[e], rng.next_u64()));
        }
    }
    let fast: Params<f32> = params.cast();
    let z = db.z;
    let passes = exec::try_map_indexed(&crops, |_, &(_, entry, seed)| {
        let pc = entry.patch.sample(cfg.n_fg, cfg.n_env, seed);
        let mods = encode(&pc, z, cfg.normalize, Ablation::NONE)?;
        forward(&fast, &mods)
    })?;
    let embeddings: Vec<Vec<f64>> = passes
        .iter()
        .map(|(m, _)| m.iter().map(|&v| v as f64).collect())
        .collect();
    let labels: Vec<u64> = crops.iter().map(|c| c.0).collect();
    let tl = batch_hard_triplet_loss(&embeddings, &labels, cfg.margin)?;
    let grads = exec::map_indexed(&passes, |i, (_, trace)| {
        let g = &tl.grads[i];
        g.iter().any(|&v| v != 0.0).then(|| {
            let g32: Vec<f32> = g.iter().map(|&v| v as f32).collect();
            backward(&fast, trace, &g32)
        })
    });
    let mut total = NetworkParams::zeros(&params.config);
    for g in grads.iter().flatten() {
        total.add_assign(g);
    }
    Ok((tl.loss, total))
}

/// Trains from scratch. Calls `on_epoch(epoch, mean_loss)` after each epoch and
/// writes `checkpoint_epoch_NNN.bin` into `checkpoint_dir` when given.
pub fn train(
    db: &CropDatabase,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = cfg.net_config(db.z);
    net.validate()?;
    if net.z != db.z {
        return Err(Error::InvalidConfig(format!(
            "network expects z={}, database has z={}",
            net.z, db.z
        )));
    }
    let mut params = init_params(cfg.rng_seed, &net);
    let mut opt = Adam::new(cfg.learning_rate, params.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5EED_BA7C);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let (loss, grads) = batch_gradient(&params, db, cfg, &mut rng)?;
            opt.step_params(&mut params, &grads);
            sum += loss;
        }
        let mean = sum / cfg.batches_per_epoch as f64;
        curve.push(mean);
        if let Some(dir) = checkpoint_dir {
            save_params(&params, &dir.join(format!("checkpoint_epoch_{epoch:03}.bin")))?;
        }
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

pub fn write_loss_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(s, "{},{}", i + 1, l).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
