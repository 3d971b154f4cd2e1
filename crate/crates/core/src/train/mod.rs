//! Metric learning for the embedding network: crop database, batch sampling
//! of D tracks x 3 equally spaced crops, batch-hard triplet loss and Adam.

mod adam;
mod batch;
mod db;
mod gradcheck;
mod trainer;
mod triplet;

pub use adam::Adam;
pub use batch::{feasible_triples, sample_batch, BatchItem};
pub use db::{global_track_id, CropDatabase, CropEntry};
pub use gradcheck::{gradient_check, reference_case, GradCheckCase, GradCheckReport};
pub use trainer::{train, write_loss_csv, TrainOutcome};
pub use triplet::{batch_hard_triplet_loss, distance_matrix, euclidean, AnchorSelection, TripletLoss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Track ids per batch.
    pub d: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub rng_seed: u64,
    pub spacing_min: u32,
    pub spacing_max: u32,
    pub n_fg: usize,
    pub n_env: usize,
    pub k: f64,
    pub normalize: bool,
    /// Layer widths; the standard network for the dataset's class count when
    /// absent.
    pub net: Option<NetConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 18,
            margin: 0.2,
            learning_rate: 1e-3,
            epochs: 20,
            batches_per_epoch: 50,
            rng_seed: 0,
            spacing_min: 1,
            spacing_max: 10,
            n_fg: 1000,
            n_env: 500,
            k: 0.2,
            normalize: true,
            net: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.d < 2 {
            return fail("d must be >= 2");
        }
        if !(self.margin > 0.0) {
            return fail("margin must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        if self.spacing_min < 1 || self.spacing_max < self.spacing_min {
            return fail("spacing range must satisfy 1 <= min <= max");
        }
        if self.n_fg == 0 || self.n_env == 0 {
            return fail("n_fg and n_env must be >= 1");
        }
        if self.batches_per_epoch == 0 {
            return fail("batches_per_epoch must be >= 1");
        }
        Ok(())
    }

    pub fn net_config(&self, z: usize) -> NetConfig {
        self.net.clone().unwrap_or_else(|| NetConfig::standard(z))
    }
}
