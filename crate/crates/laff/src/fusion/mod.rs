//! Fusion blocks and the paired multi-space encoder.
//!
//! A fusion block maps a set of heterogeneous feature vectors to one
//! embedding in a common space. Four block types are provided: the
//! attentional convex-combination block (`laff`), its uniform-average
//! counterpart (`attention_free`), a multi-head self-attention block over
//! feature tokens (`mhsa`) and a plain concatenation baseline (`concat`).
//! The encoder deploys `h` independent (video block, text block) pairs;
//! ranking uses the mean of the per-space cosines. Declaring frame-level
//! video features with the `laff` block adds a bottom-up level: each frame
//! stream is first reduced to a video-level vector by its own attention
//! block, and the stream outputs join the remaining video-level features
//! in the top block.

use serde::{Deserialize, Serialize};

use crate::dataio::FeatureLevel;
use crate::error::{Error, Result};

pub mod blocks;
pub mod inputs;
pub mod io;
pub mod model;
pub mod params;
pub mod weights;

pub use blocks::{attention_free_forward, concat_forward, laff_forward, mhsa_forward};
pub use inputs::{
    assemble_pair_batch, assemble_text_inputs, assemble_video_inputs, BatchInputs,
    VideoFeatureInput,
};
pub use io::{load_model, save_model};
pub use model::{frame_stream_forward, similarity, EncodeOutput, TrainForward};
pub use params::{
    AffineParams, AttentionFreeParams, BlockParams, ConcatParams, FusionModel, LaffBlockParams,
    MhsaBlockParams, SpaceParams,
};
pub use weights::{average_attention_weights, select_features, AverageAttentionWeights};

/// A declared video-end input feature.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct VideoFeatureDecl {
    pub name: String,
    pub dim: usize,
    #[serde(default = "video_level")]
    pub level: FeatureLevel,
}

/// A declared text-end input feature (always sentence-level).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TextFeatureDecl {
    pub name: String,
    pub dim: usize,
}

fn video_level() -> FeatureLevel {
    FeatureLevel::Video
}

/// Which fusion block to instantiate in every space, at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionBlockKind {
    Laff,
    AttentionFree,
    Mhsa,
    Concat,
}

/// Architecture of a paired multi-space fusion encoder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub video_features: Vec<VideoFeatureDecl>,
    pub text_features: Vec<TextFeatureDecl>,
    /// Number of common spaces.
    pub h: usize,
    /// Total embedding budget; every space gets `d0 / h` dimensions, so the
    /// trainable parameter count of the `laff` block does not depend on `h`.
    pub d0: usize,
    pub block: FusionBlockKind,
    #[serde(default = "default_heads")]
    pub mhsa_heads: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_heads() -> usize {
    1
}

fn default_dropout() -> f64 {
    0.2
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("h must be at least 1".into()));
        }
        if self.d0 == 0 || self.d0 % self.h != 0 {
            return Err(Error::Config(format!(
                "d0 ({}) must be a positive multiple of h ({})",
                self.d0, self.h
            )));
        }
        if self.video_features.is_empty() || self.text_features.is_empty() {
            return Err(Error::Config(
                "both modalities need at least one feature".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.video_features {
            if f.dim == 0 {
                return Err(Error::Config(format!("video feature {:?} has dim 0", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::Config(format!(
                    "video feature name {:?} repeated",
                    f.name
                )));
            }
        }
        names.clear();
        for f in &self.text_features {
            if f.dim == 0 {
                return Err(Error::Config(format!("text feature {:?} has dim 0", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::Config(format!(
                    "text feature name {:?} repeated",
                    f.name
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        let d = self.space_dim();
        if self.block == FusionBlockKind::Mhsa {
            if self.mhsa_heads == 0 {
                return Err(Error::Config("mhsa_heads must be at least 1".into()));
            }
            if d % self.mhsa_heads != 0 {
                return Err(Error::Config(format!(
                    "mhsa_heads ({}) must divide the per-space dim ({d})",
                    self.mhsa_heads
                )));
            }
        }
        if self.has_frame_features() && self.block != FusionBlockKind::Laff {
            return Err(Error::Config(
                "frame-level features require the laff block; mean-pool them to video level \
                 for other blocks"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Dimensionality of each common space.
    pub fn space_dim(&self) -> usize {
        self.d0 / self.h
    }

    pub fn has_frame_features(&self) -> bool {
        self.video_features
            .iter()
            .any(|f| f.level == FeatureLevel::Frame)
    }

    /// Multi-level mode: laff block driven by at least one frame stream.
    pub fn is_multi_level(&self) -> bool {
        self.block == FusionBlockKind::Laff && self.has_frame_features()
    }

    /// Indices (into `video_features`) of the frame-level streams.
    pub fn frame_feature_indices(&self) -> Vec<usize> {
        self.video_features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.level == FeatureLevel::Frame)
            .map(|(i, _)| i)
            .collect()
    }

    /// Input widths the video block sees: raw dims for video-level
    /// features, the space dim for frame streams (their reduced outputs).
    pub fn video_block_input_dims(&self) -> Vec<usize> {
        let d = self.space_dim();
        self.video_features
            .iter()
            .map(|f| match f.level {
                FeatureLevel::Video => f.dim,
                FeatureLevel::Frame => d,
            })
            .collect()
    }

    pub fn text_block_input_dims(&self) -> Vec<usize> {
        self.text_features.iter().map(|f| f.dim).collect()
    }
}

/// Exact number of trainable scalars a model built from this config holds,
/// computed by walking the declared shapes.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let d = config.space_dim();
    let mut per_space = 0usize;
    if config.is_multi_level() {
        for idx in config.frame_feature_indices() {
            let f = &config.video_features[idx];
            // shared frame projection + bias + attention vector
            per_space += f.dim * d + d + d;
        }
    }
    per_space += block_param_count(&config.video_block_input_dims(), d, config.block);
    per_space += block_param_count(&config.text_block_input_dims(), d, config.block);
    Ok(per_space * config.h)
}

fn block_param_count(dims: &[usize], d: usize, block: FusionBlockKind) -> usize {
    let projections: usize = dims.iter().map(|&dm| dm * d + d).sum();
    match block {
        FusionBlockKind::Laff => projections + d,
        FusionBlockKind::AttentionFree => projections,
        // Q/V/O affine maps plus the bias-free key map.
        FusionBlockKind::Mhsa => projections + 4 * d * d + 3 * d,
        FusionBlockKind::Concat => dims.iter().sum::<usize>() * d + d,
    }
}
