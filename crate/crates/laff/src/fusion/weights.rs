//! Attention-weight aggregation and weight-driven feature selection.
//!
//! Each attentional block emits one weight per input feature per sample;
//! the per-feature mean over samples and spaces measures how much the
//! fused embedding relies on that feature, which makes the weights usable
//! for pruning the feature set.

use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetManifest, FeatureStore, Split};
use crate::error::{Error, Result};

use super::inputs::{assemble_text_inputs, assemble_video_inputs};
use super::params::FusionModel;
use super::{FusionBlockKind, ModelConfig};

/// Per-feature mean attention weights, one entry per declared feature in
/// declaration order. Each modality's weights sum to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AverageAttentionWeights {
    pub video: Vec<(String, f64)>,
    pub text: Vec<(String, f64)>,
}

/// Mean attention weight per feature over all samples of a split and all
/// spaces, at both ends. Requires the attentional block.
pub fn average_attention_weights(
    model: &FusionModel,
    store: &FeatureStore,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<AverageAttentionWeights> {
    if model.config.block != FusionBlockKind::Laff {
        return Err(Error::Unsupported(
            "average attention weights need the laff block".into(),
        ));
    }
    let video_ids: Vec<String> = manifest.split_videos(split).to_vec();
    let caption_ids: Vec<String> = manifest
        .split_captions(split)
        .iter()
        .map(|c| c.caption_id.clone())
        .collect();
    if video_ids.is_empty() || caption_ids.is_empty() {
        return Err(Error::Degenerate(format!("split {split:?} is empty")));
    }

    let k_video = model.config.video_features.len();
    let mut video_sums = vec![0.0; k_video];
    let mut video_count = 0usize;
    for chunk in video_ids.chunks(256) {
        let inputs = assemble_video_inputs(store, &model.config, chunk)?;
        let (_, weights) = model.encode_videos(&inputs)?;
        for space_weights in &weights {
            for r in 0..space_weights.rows() {
                for (sum, &w) in video_sums.iter_mut().zip(space_weights.row(r)) {
                    *sum += w;
                }
            }
        }
        video_count += chunk.len() * model.config.h;
    }

    let k_text = model.config.text_features.len();
    let mut text_sums = vec![0.0; k_text];
    let mut text_count = 0usize;
    for chunk in caption_ids.chunks(256) {
        let inputs = assemble_text_inputs(store, &model.config, chunk)?;
        let (_, weights) = model.encode_texts(&inputs)?;
        for space_weights in &weights {
            for r in 0..space_weights.rows() {
                for (sum, &w) in text_sums.iter_mut().zip(space_weights.row(r)) {
                    *sum += w;
                }
            }
        }
        text_count += chunk.len() * model.config.h;
    }

    Ok(AverageAttentionWeights {
        video: model
            .config
            .video_features
            .iter()
            .zip(&video_sums)
            .map(|(f, &s)| (f.name.clone(), s / video_count as f64))
            .collect(),
        text: model
            .config
            .text_features
            .iter()
            .zip(&text_sums)
            .map(|(f, &s)| (f.name.clone(), s / text_count as f64))
            .collect(),
    })
}

/// Keep the `top_video` / `top_text` highest-mean-weight features per
/// modality (ties resolved by declaration order) and return the reduced
/// config. Declaration order of the surviving features is preserved.
pub fn select_features(
    weights: &AverageAttentionWeights,
    config: &ModelConfig,
    top_video: usize,
    top_text: usize,
) -> Result<ModelConfig> {
    if top_video == 0 || top_text == 0 {
        return Err(Error::Config("top_m must be at least 1".into()));
    }
    if top_video > config.video_features.len() || top_text > config.text_features.len() {
        return Err(Error::Config(format!(
            "top_m ({top_video}/{top_text}) exceeds the feature count ({}/{})",
            config.video_features.len(),
            config.text_features.len()
        )));
    }
    let keep = |weights: &[(String, f64)], top: usize| -> Vec<String> {
        let mut order: Vec<usize> = (0..weights.len()).collect();
        // Stable sort: equal weights keep declaration order.
        order.sort_by(|&a, &b| weights[b].1.partial_cmp(&weights[a].1).unwrap());
        let mut kept: Vec<usize> = order.into_iter().take(top).collect();
        kept.sort_unstable();
        kept.into_iter().map(|i| weights[i].0.clone()).collect()
    };
    let video_kept = keep(&weights.video, top_video);
    let text_kept = keep(&weights.text, top_text);

    let mut reduced = config.clone();
    reduced.video_features.retain(|f| video_kept.contains(&f.name));
    reduced.text_features.retain(|f| text_kept.contains(&f.name));
    reduced.validate()?;
    Ok(reduced)
}
