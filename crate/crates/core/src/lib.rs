//! Multi-view graph clustering with an adaptive hybrid low/high-pass graph
//! filter.
//!
//! The pipeline: per-view autoencoders embed features and adjacency, their
//! product gives a joint aggregation kernel, a hybrid filter weighted by the
//! estimated homophily ratio smooths or sharpens the features over that
//! kernel, and the filtered views are fused into a consensus embedding that
//! k-means clusters.

pub mod autodiff;
pub mod clustering;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod filterbank;
pub mod fusion;
pub mod graph;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use graph::{MultiViewGraph, OneHotLabels};
pub use train::{train, TrainConfig, TrainOutput, TrainReport};
