//! Assembly of model inputs from a feature store.

use crate::dataio::{FeatureLevel, FeatureStore, Pair};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

use super::ModelConfig;

/// One declared video feature over a batch: a dense `n × dim` matrix for
/// video-level features, or one frame matrix per sample for frame streams.
#[derive(Debug, Clone)]
pub enum VideoFeatureInput {
    Video(Matrix),
    Frames(Vec<Matrix>),
}

impl VideoFeatureInput {
    pub fn samples(&self) -> usize {
        match self {
            VideoFeatureInput::Video(m) => m.rows(),
            VideoFeatureInput::Frames(v) => v.len(),
        }
    }
}

/// A paired batch: per declared feature, in declaration order.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub video: Vec<VideoFeatureInput>,
    pub text: Vec<Matrix>,
}

impl BatchInputs {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n_video = Self::validate_video(config, &self.video)?;
        let n_text = Self::validate_text(config, &self.text)?;
        if n_video != n_text {
            return Err(Error::dim(
                "batch_inputs",
                format!("{n_video} video rows vs {n_text} text rows"),
            ));
        }
        Ok(())
    }

    pub fn validate_video(config: &ModelConfig, video: &[VideoFeatureInput]) -> Result<usize> {
        if video.len() != config.video_features.len() {
            return Err(Error::dim(
                "batch_inputs",
                format!(
                    "{} video inputs for {} declared features",
                    video.len(),
                    config.video_features.len()
                ),
            ));
        }
        let mut n = None;
        for (decl, input) in config.video_features.iter().zip(video) {
            let rows = input.samples();
            if *n.get_or_insert(rows) != rows {
                return Err(Error::dim(
                    "batch_inputs",
                    format!("feature {:?} has {rows} samples, expected {n:?}", decl.name),
                ));
            }
            match (decl.level, input) {
                (FeatureLevel::Video, VideoFeatureInput::Video(m)) => {
                    if m.cols() != decl.dim {
                        return Err(Error::dim(
                            "batch_inputs",
                            format!(
                                "feature {:?} width {} vs declared {}",
                                decl.name,
                                m.cols(),
                                decl.dim
                            ),
                        ));
                    }
                }
                (FeatureLevel::Frame, VideoFeatureInput::Frames(samples)) => {
                    for frames in samples {
                        if frames.cols() != decl.dim {
                            return Err(Error::dim(
                                "batch_inputs",
                                format!(
                                    "frame feature {:?} width {} vs declared {}",
                                    decl.name,
                                    frames.cols(),
                                    decl.dim
                                ),
                            ));
                        }
                        if frames.rows() == 0 {
                            return Err(Error::Degenerate(format!(
                                "frame feature {:?} has an empty sequence",
                                decl.name
                            )));
                        }
                    }
                }
                _ => {
                    return Err(Error::dim(
                        "batch_inputs",
                        format!("feature {:?} level does not match its input", decl.name),
                    ))
                }
            }
        }
        Ok(n.unwrap_or(0))
    }

    pub fn validate_text(config: &ModelConfig, text: &[Matrix]) -> Result<usize> {
        if text.len() != config.text_features.len() {
            return Err(Error::dim(
                "batch_inputs",
                format!(
                    "{} text inputs for {} declared features",
                    text.len(),
                    config.text_features.len()
                ),
            ));
        }
        let mut n = None;
        for (decl, m) in config.text_features.iter().zip(text) {
            if *n.get_or_insert(m.rows()) != m.rows() {
                return Err(Error::dim(
                    "batch_inputs",
                    format!("text feature {:?} row count mismatch", decl.name),
                ));
            }
            if m.cols() != decl.dim {
                return Err(Error::dim(
                    "batch_inputs",
                    format!(
                        "text feature {:?} width {} vs declared {}",
                        decl.name,
                        m.cols(),
                        decl.dim
                    ),
                ));
            }
        }
        Ok(n.unwrap_or(0))
    }
}

/// Gather the declared video features for the given video ids.
pub fn assemble_video_inputs(
    store: &FeatureStore,
    config: &ModelConfig,
    video_ids: &[String],
) -> Result<Vec<VideoFeatureInput>> {
    config
        .video_features
        .iter()
        .map(|decl| {
            let set = store.get(&decl.name)?;
            if set.dim != decl.dim {
                return Err(Error::Config(format!(
                    "feature {:?}: store dim {} vs declared {}",
                    decl.name, set.dim, decl.dim
                )));
            }
            if set.level() != decl.level {
                return Err(Error::Config(format!(
                    "feature {:?}: store level does not match declaration",
                    decl.name
                )));
            }
            match decl.level {
                FeatureLevel::Video => {
                    let mut m = Matrix::zeros(video_ids.len(), decl.dim);
                    for (r, id) in video_ids.iter().enumerate() {
                        let v = set.vector(id).ok_or_else(|| {
                            Error::Config(format!("feature {:?} missing id {id:?}", decl.name))
                        })?;
                        m.row_mut(r).copy_from_slice(v);
                    }
                    Ok(VideoFeatureInput::Video(m))
                }
                FeatureLevel::Frame => {
                    let samples = video_ids
                        .iter()
                        .map(|id| {
                            set.frames(id).cloned().ok_or_else(|| {
                                Error::Config(format!(
                                    "feature {:?} missing id {id:?}",
                                    decl.name
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(VideoFeatureInput::Frames(samples))
                }
            }
        })
        .collect()
}

/// Gather the declared text features for the given caption ids.
pub fn assemble_text_inputs(
    store: &FeatureStore,
    config: &ModelConfig,
    caption_ids: &[String],
) -> Result<Vec<Matrix>> {
    config
        .text_features
        .iter()
        .map(|decl| {
            let set = store.get(&decl.name)?;
            if set.dim != decl.dim {
                return Err(Error::Config(format!(
                    "feature {:?}: store dim {} vs declared {}",
                    decl.name, set.dim, decl.dim
                )));
            }
            let mut m = Matrix::zeros(caption_ids.len(), decl.dim);
            for (r, id) in caption_ids.iter().enumerate() {
                let v = set.vector(id).ok_or_else(|| {
                    Error::Config(format!("feature {:?} missing caption {id:?}", decl.name))
                })?;
                m.row_mut(r).copy_from_slice(v);
            }
            Ok(m)
        })
        .collect()
}

/// Build the paired inputs for a training batch of (caption, video) pairs.
pub fn assemble_pair_batch(
    store: &FeatureStore,
    config: &ModelConfig,
    pairs: &[Pair],
) -> Result<BatchInputs> {
    let caption_ids: Vec<String> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let video_ids: Vec<String> = pairs.iter().map(|(_, v)| v.clone()).collect();
    Ok(BatchInputs {
        video: assemble_video_inputs(store, config, &video_ids)?,
        text: assemble_text_inputs(store, config, &caption_ids)?,
    })
}
