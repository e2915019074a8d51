//! Detection of ridesourcing vehicles from GPS trajectories.
//!
//! A random forest trained on public taxi (positive) and bus (negative)
//! traces over fifteen domain-durable features seeds high-confidence labels
//! among unlabeled candidate cars. Those seeds then drive co-training of a
//! forest over the same features and a pair of convolutional networks over
//! per-day stay-time images, whose averaged confidence is the final detector.
//!
//! The crate also ships a synthetic fleet simulator so the whole pipeline can
//! be exercised without proprietary trace data.

pub mod error;
pub mod eval;
pub mod cnn;
pub mod config;
pub mod features;
pub mod forest;
pub mod image;
pub mod pipeline;
pub mod traj;

mod codec;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
