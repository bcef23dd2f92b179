//! The paired multi-space encoder: batch forward/backward over all `h`
//! spaces at both ends, embedding normalization, and similarity helpers.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::diffmath::{
    cosine_matrix, l2_normalize_rows, l2_normalize_rows_backward, Matrix, Mode,
};
use crate::error::{Error, Result};

use super::blocks::{
    attention_free_backward, attention_free_forward_cached, concat_backward,
    concat_forward_cached, frame_stream_backward, frame_stream_forward_cached,
    laff_backward, laff_forward_cached, mhsa_backward, mhsa_forward_cached, AttentionFreeCache,
    ConcatCache, FrameSampleCache, LaffCache, MhsaCache,
};
use super::inputs::{BatchInputs, VideoFeatureInput};
use super::params::{BlockParams, FusionModel, LaffBlockParams, SpaceParams};
use super::ModelConfig;

pub(crate) enum BlockCache {
    Laff(LaffCache),
    AttentionFree(AttentionFreeCache),
    Mhsa(MhsaCache),
    Concat(ConcatCache),
}

/// Everything one end of one space needs for its backward pass.
pub(crate) struct EndCache {
    frame_caches: Vec<Vec<FrameSampleCache>>,
    stream_outputs: Vec<Matrix>,
    block: BlockCache,
    prenorm: Matrix,
}

/// Output of a training-mode forward pass over one batch.
pub struct TrainForward {
    /// Per space: `n × d` unit-row video embeddings.
    pub video_embeddings: Vec<Matrix>,
    /// Per space: `n × d` unit-row text embeddings.
    pub text_embeddings: Vec<Matrix>,
    /// Per space: `n × k₁` attention weights (laff block only, else empty).
    pub video_weights: Vec<Matrix>,
    /// Per space: `n × k₂` attention weights (laff block only, else empty).
    pub text_weights: Vec<Matrix>,
    video_caches: Vec<EndCache>,
    text_caches: Vec<EndCache>,
}

/// Embeddings (and attention weights, for the laff block) of both ends.
pub struct EncodeOutput {
    pub video_embeddings: Vec<Matrix>,
    pub text_embeddings: Vec<Matrix>,
    pub video_weights: Vec<Matrix>,
    pub text_weights: Vec<Matrix>,
}

fn block_forward(
    params: &BlockParams,
    features: &[&Matrix],
    config: &ModelConfig,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, Option<Matrix>, BlockCache)> {
    let rate = config.dropout_rate;
    match params {
        BlockParams::Laff(p) => {
            let (out, cache) = laff_forward_cached(features, p, rate, mode, rng)?;
            Ok((out, Some(cache.weights.clone()), BlockCache::Laff(cache)))
        }
        BlockParams::AttentionFree(p) => {
            let (out, cache) = attention_free_forward_cached(features, p, rate, mode, rng)?;
            Ok((out, None, BlockCache::AttentionFree(cache)))
        }
        BlockParams::Mhsa(p) => {
            let (out, cache) =
                mhsa_forward_cached(features, p, config.mhsa_heads, rate, mode, rng)?;
            Ok((out, None, BlockCache::Mhsa(cache)))
        }
        BlockParams::Concat(p) => {
            let (out, cache) = concat_forward_cached(features, p, rate, mode, rng)?;
            Ok((out, None, BlockCache::Concat(cache)))
        }
    }
}

fn block_backward(
    params: &mut BlockParams,
    features: &[&Matrix],
    config: &ModelConfig,
    cache: &BlockCache,
    upstream: &Matrix,
) -> Result<Vec<Matrix>> {
    match (params, cache) {
        (BlockParams::Laff(p), BlockCache::Laff(c)) => laff_backward(upstream, features, p, c),
        (BlockParams::AttentionFree(p), BlockCache::AttentionFree(c)) => {
            attention_free_backward(upstream, features, p, c)
        }
        (BlockParams::Mhsa(p), BlockCache::Mhsa(c)) => {
            mhsa_backward(upstream, features, p, config.mhsa_heads, c)
        }
        (BlockParams::Concat(p), BlockCache::Concat(c)) => {
            concat_backward(upstream, features, p, c)
        }
        _ => Err(Error::Numeric(
            "block cache does not match block parameters".into(),
        )),
    }
}

fn forward_video_end(
    space: &SpaceParams,
    config: &ModelConfig,
    inputs: &[VideoFeatureInput],
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, Option<Matrix>, EndCache)> {
    let d = config.space_dim();
    let mut stream_outputs = Vec::new();
    let mut frame_caches = Vec::new();
    let mut stream_idx = 0;
    for input in inputs {
        if let VideoFeatureInput::Frames(samples) = input {
            let params = space.frame_streams.get(stream_idx).ok_or_else(|| {
                Error::Config("frame-level input given to a model without frame streams".into())
            })?;
            let mut out = Matrix::zeros(samples.len(), d);
            let mut caches = Vec::with_capacity(samples.len());
            for (r, frames) in samples.iter().enumerate() {
                let (vec_out, cache) =
                    frame_stream_forward_cached(frames, params, config.dropout_rate, mode, rng)?;
                out.row_mut(r).copy_from_slice(&vec_out);
                caches.push(cache);
            }
            stream_outputs.push(out);
            frame_caches.push(caches);
            stream_idx += 1;
        }
    }

    let mut effective: Vec<&Matrix> = Vec::with_capacity(inputs.len());
    let mut si = 0;
    for input in inputs {
        match input {
            VideoFeatureInput::Video(m) => effective.push(m),
            VideoFeatureInput::Frames(_) => {
                effective.push(&stream_outputs[si]);
                si += 1;
            }
        }
    }

    let (prenorm, weights, block) = block_forward(&space.video_block, &effective, config, mode, rng)?;
    let emb = l2_normalize_rows(&prenorm)?;
    Ok((
        emb,
        weights,
        EndCache {
            frame_caches,
            stream_outputs,
            block,
            prenorm,
        },
    ))
}

fn forward_text_end(
    space: &SpaceParams,
    config: &ModelConfig,
    inputs: &[Matrix],
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, Option<Matrix>, EndCache)> {
    let effective: Vec<&Matrix> = inputs.iter().collect();
    let (prenorm, weights, block) = block_forward(&space.text_block, &effective, config, mode, rng)?;
    let emb = l2_normalize_rows(&prenorm)?;
    Ok((
        emb,
        weights,
        EndCache {
            frame_caches: Vec::new(),
            stream_outputs: Vec::new(),
            block,
            prenorm,
        },
    ))
}

fn backward_video_end(
    space: &mut SpaceParams,
    config: &ModelConfig,
    inputs: &[VideoFeatureInput],
    cache: &EndCache,
    grad_embedding: &Matrix,
) -> Result<()> {
    let grad_prenorm = l2_normalize_rows_backward(grad_embedding, &cache.prenorm)?;
    let mut effective: Vec<&Matrix> = Vec::with_capacity(inputs.len());
    let mut si = 0;
    for input in inputs {
        match input {
            VideoFeatureInput::Video(m) => effective.push(m),
            VideoFeatureInput::Frames(_) => {
                effective.push(&cache.stream_outputs[si]);
                si += 1;
            }
        }
    }
    let grad_features = block_backward(
        &mut space.video_block,
        &effective,
        config,
        &cache.block,
        &grad_prenorm,
    )?;

    let mut si = 0;
    for (idx, input) in inputs.iter().enumerate() {
        if let VideoFeatureInput::Frames(samples) = input {
            let params = &mut space.frame_streams[si];
            let stream_grad = &grad_features[idx];
            for (r, frames) in samples.iter().enumerate() {
                frame_stream_backward(
                    stream_grad.row(r),
                    frames,
                    params,
                    &cache.frame_caches[si][r],
                )?;
            }
            si += 1;
        }
    }
    Ok(())
}

fn backward_text_end(
    space: &mut SpaceParams,
    config: &ModelConfig,
    inputs: &[Matrix],
    cache: &EndCache,
    grad_embedding: &Matrix,
) -> Result<()> {
    let grad_prenorm = l2_normalize_rows_backward(grad_embedding, &cache.prenorm)?;
    let effective: Vec<&Matrix> = inputs.iter().collect();
    block_backward(
        &mut space.text_block,
        &effective,
        config,
        &cache.block,
        &grad_prenorm,
    )?;
    Ok(())
}

impl FusionModel {
    /// Forward both ends of a paired batch through every space, keeping
    /// the caches the backward pass needs.
    pub fn forward_batch(
        &self,
        inputs: &BatchInputs,
        mode: Mode,
        rng: &mut StdRng,
    ) -> Result<TrainForward> {
        inputs.validate(&self.config)?;
        let mut fwd = TrainForward {
            video_embeddings: Vec::with_capacity(self.config.h),
            text_embeddings: Vec::with_capacity(self.config.h),
            video_weights: Vec::new(),
            text_weights: Vec::new(),
            video_caches: Vec::with_capacity(self.config.h),
            text_caches: Vec::with_capacity(self.config.h),
        };
        for space in &self.spaces {
            let (v_emb, v_w, v_cache) =
                forward_video_end(space, &self.config, &inputs.video, mode, rng)?;
            let (t_emb, t_w, t_cache) =
                forward_text_end(space, &self.config, &inputs.text, mode, rng)?;
            fwd.video_embeddings.push(v_emb);
            fwd.text_embeddings.push(t_emb);
            if let Some(w) = v_w {
                fwd.video_weights.push(w);
            }
            if let Some(w) = t_w {
                fwd.text_weights.push(w);
            }
            fwd.video_caches.push(v_cache);
            fwd.text_caches.push(t_cache);
        }
        Ok(fwd)
    }

    /// Backpropagate per-space gradients of the (normalized) embeddings
    /// into the parameter `grad` buffers.
    pub fn backward_batch(
        &mut self,
        fwd: &TrainForward,
        inputs: &BatchInputs,
        grad_video: &[Matrix],
        grad_text: &[Matrix],
    ) -> Result<()> {
        if grad_video.len() != self.config.h || grad_text.len() != self.config.h {
            return Err(Error::dim(
                "backward_batch",
                format!(
                    "{} video and {} text gradients for h={}",
                    grad_video.len(),
                    grad_text.len(),
                    self.config.h
                ),
            ));
        }
        let config = self.config.clone();
        for (i, space) in self.spaces.iter_mut().enumerate() {
            backward_video_end(space, &config, &inputs.video, &fwd.video_caches[i], &grad_video[i])?;
            backward_text_end(space, &config, &inputs.text, &fwd.text_caches[i], &grad_text[i])?;
        }
        Ok(())
    }

    /// Eval-mode embeddings of a video batch: per space `n × d` unit rows,
    /// plus per-space attention weights when the block is attentional.
    pub fn encode_videos(
        &self,
        inputs: &[VideoFeatureInput],
    ) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        BatchInputs::validate_video(&self.config, inputs)?;
        let mut rng = StdRng::seed_from_u64(0); // unused in eval mode
        let mut embeddings = Vec::with_capacity(self.config.h);
        let mut weights = Vec::new();
        for space in &self.spaces {
            let (emb, w, _) = forward_video_end(space, &self.config, inputs, Mode::Eval, &mut rng)?;
            embeddings.push(emb);
            if let Some(w) = w {
                weights.push(w);
            }
        }
        Ok((embeddings, weights))
    }

    /// Eval-mode embeddings of a caption batch.
    pub fn encode_texts(&self, inputs: &[Matrix]) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        BatchInputs::validate_text(&self.config, inputs)?;
        let mut rng = StdRng::seed_from_u64(0);
        let mut embeddings = Vec::with_capacity(self.config.h);
        let mut weights = Vec::new();
        for space in &self.spaces {
            let (emb, w, _) = forward_text_end(space, &self.config, inputs, Mode::Eval, &mut rng)?;
            embeddings.push(emb);
            if let Some(w) = w {
                weights.push(w);
            }
        }
        Ok((embeddings, weights))
    }

    /// Encode a paired batch at both ends without keeping caches.
    pub fn encode_pairwise(
        &self,
        inputs: &BatchInputs,
        mode: Mode,
        rng: &mut StdRng,
    ) -> Result<EncodeOutput> {
        let fwd = self.forward_batch(inputs, mode, rng)?;
        Ok(EncodeOutput {
            video_embeddings: fwd.video_embeddings,
            text_embeddings: fwd.text_embeddings,
            video_weights: fwd.video_weights,
            text_weights: fwd.text_weights,
        })
    }
}

/// Reduce one frame sequence to a single vector with a frame-level
/// attention block (shared projection, softmax over frames).
pub fn frame_stream_forward(
    frames: &Matrix,
    params: &LaffBlockParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<Vec<f64>> {
    let (out, _) = frame_stream_forward_cached(frames, params, dropout_rate, mode, rng)?;
    Ok(out)
}

/// Mean of the per-space cosines for one (video, text) embedding pair,
/// plus the individual per-space values.
pub fn similarity(video_spaces: &[Vec<f64>], text_spaces: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if video_spaces.is_empty() || video_spaces.len() != text_spaces.len() {
        return Err(Error::dim(
            "similarity",
            format!(
                "{} video vs {} text spaces",
                video_spaces.len(),
                text_spaces.len()
            ),
        ));
    }
    let mut per_space = Vec::with_capacity(video_spaces.len());
    for (v, t) in video_spaces.iter().zip(text_spaces) {
        if v.len() != t.len() {
            return Err(Error::dim(
                "similarity",
                format!("embedding dims {} vs {}", v.len(), t.len()),
            ));
        }
        let mut dot = 0.0;
        for (&a, &b) in v.iter().zip(t) {
            dot += a * b;
        }
        per_space.push(dot);
    }
    let mean = per_space.iter().sum::<f64>() / per_space.len() as f64;
    Ok((mean, per_space))
}

/// Per-space similarity matrices between query (text) and video
/// embeddings: entry `[q][v]` is the cosine in that space.
pub fn space_similarities(
    text_embeddings: &[Matrix],
    video_embeddings: &[Matrix],
) -> Result<Vec<Matrix>> {
    if text_embeddings.len() != video_embeddings.len() {
        return Err(Error::dim(
            "space_similarities",
            format!(
                "{} text vs {} video spaces",
                text_embeddings.len(),
                video_embeddings.len()
            ),
        ));
    }
    text_embeddings
        .iter()
        .zip(video_embeddings)
        .map(|(t, v)| cosine_matrix(t, v))
        .collect()
}
