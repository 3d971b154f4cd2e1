//! Tracking by points: instance segments become 2D point clouds, a small
//! two-branch network turns them into embeddings, and an online tracker
//! associates them across frames. Includes a synthetic MOTS world and
//! CLEAR-MOTS evaluation.

pub mod error;
pub mod exec;
pub mod mask;
pub mod net;
pub mod pointcloud;
pub mod raster;
pub mod dataset;
pub mod train;
pub mod track;
pub mod eval;
pub mod consistency;
pub mod synth;
pub mod pipeline;

pub use error::{Error, Result};
