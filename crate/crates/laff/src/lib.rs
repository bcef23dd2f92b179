//! Text-to-video retrieval on precomputed feature vectors.
//!
//! The crate trains paired attentional feature-fusion encoders that map
//! heterogeneous video and text features into one or more shared embedding
//! spaces, ranks videos by mean per-space cosine similarity, and evaluates
//! retrieval quality (R@K, median rank, mAP). A deterministic synthetic
//! dataset generator makes the whole pipeline verifiable at desk scale.

pub mod cli;
pub mod dataio;
pub mod diffmath;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod objective;
pub mod optim;

pub use error::{Error, Result};
