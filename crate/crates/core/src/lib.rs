//! Skeleton-cloud colorization and repainting.
//!
//! Skeleton sequences become unordered 3D point clouds, get painted by frame
//! order, joint order or person identity, and a point-cloud autoencoder is
//! trained to repaint raw clouds into the painted targets. The learned
//! encoders are then evaluated with a linear probe or fine-tuned.

pub mod autodiff;
pub mod chamfer;
pub mod colorize;
pub mod error;
pub mod evalbench;
pub mod net;
pub mod par;
pub mod rng;
pub mod skeleton_data;
pub mod training;

pub use error::{Error, Result};
