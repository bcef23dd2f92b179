//! Parameter containers for the fusion blocks and the full model.
//!
//! Construction, parameter visiting and serialization all traverse the
//! same canonical order: for each space, first the frame-stream blocks in
//! declaration order, then the video block, then the text block; inside a
//! block, projection weight then bias per input feature, then any
//! block-specific parameters.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::dataio::derive_seed;
use crate::diffmath::{affine_backward, affine_forward, Matrix, Parameter};
use crate::error::Result;

use super::{FusionBlockKind, ModelConfig};

/// Weight + bias of one linear projection.
#[derive(Debug, Clone)]
pub struct AffineParams {
    pub weight: Parameter, // in_dim × out_dim
    pub bias: Parameter,   // 1 × out_dim
}

impl AffineParams {
    fn init(name: &str, in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let weight = Matrix::from_vec(in_dim, out_dim, data).expect("shape by construction");
        AffineParams {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), Matrix::zeros(1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        affine_forward(input, &self.weight.value, Some(self.bias.value.data()))
    }

    /// Accumulate weight/bias gradients and return the input gradient.
    pub fn backward_accumulate(&mut self, upstream: &Matrix, input: &Matrix) -> Result<Matrix> {
        let grads = affine_backward(upstream, input, &self.weight.value)?;
        self.weight.grad.add_assign(&grads.weight);
        for (g, &b) in self
            .bias
            .grad
            .data_mut()
            .iter_mut()
            .zip(grads.bias.iter())
        {
            *g += b;
        }
        Ok(grads.input)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Attentional convex-combination block: one projection per input feature
/// plus a shared attention vector (no bias; softmax shift invariance would
/// make one inert, and omitting it keeps the parameter count independent
/// of the space count).
#[derive(Debug, Clone)]
pub struct LaffBlockParams {
    pub projections: Vec<AffineParams>,
    pub attention: Parameter, // 1 × d
}

impl LaffBlockParams {
    pub fn init(name: &str, in_dims: &[usize], d: usize, rng: &mut StdRng) -> Self {
        let projections = in_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| AffineParams::init(&format!("{name}.proj{i}"), dim, d, rng))
            .collect();
        // Zero attention start: training begins at the uniform-average point.
        LaffBlockParams {
            projections,
            attention: Parameter::new(format!("{name}.attn"), Matrix::zeros(1, d)),
        }
    }

    pub fn feature_count(&self) -> usize {
        self.projections.len()
    }

    pub fn space_dim(&self) -> usize {
        self.attention.value.cols()
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in &self.projections {
            p.visit(f);
        }
        f(&self.attention);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in &mut self.projections {
            p.visit_mut(f);
        }
        f(&mut self.attention);
    }
}

/// Uniform-average block: the projections alone, weights fixed at 1/k.
#[derive(Debug, Clone)]
pub struct AttentionFreeParams {
    pub projections: Vec<AffineParams>,
}

impl AttentionFreeParams {
    pub fn init(name: &str, in_dims: &[usize], d: usize, rng: &mut StdRng) -> Self {
        AttentionFreeParams {
            projections: in_dims
                .iter()
                .enumerate()
                .map(|(i, &dim)| AffineParams::init(&format!("{name}.proj{i}"), dim, d, rng))
                .collect(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in &self.projections {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in &mut self.projections {
            p.visit_mut(f);
        }
    }
}

/// Self-attention block over per-feature tokens: per-feature projections
/// to the space dim, then one QKV attention layer with output projection.
/// The key map carries no bias: a key-side constant shifts every score in
/// a row equally, so softmax makes it inert.
#[derive(Debug, Clone)]
pub struct MhsaBlockParams {
    pub projections: Vec<AffineParams>,
    pub query: AffineParams,
    pub key: Parameter, // d × d, bias-free
    pub value: AffineParams,
    pub output: AffineParams,
}

impl MhsaBlockParams {
    pub fn init(name: &str, in_dims: &[usize], d: usize, rng: &mut StdRng) -> Self {
        let projections = in_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| AffineParams::init(&format!("{name}.proj{i}"), dim, d, rng))
            .collect();
        let key_init = AffineParams::init(&format!("{name}.key"), d, d, rng);
        MhsaBlockParams {
            projections,
            query: AffineParams::init(&format!("{name}.query"), d, d, rng),
            key: key_init.weight,
            value: AffineParams::init(&format!("{name}.value"), d, d, rng),
            output: AffineParams::init(&format!("{name}.output"), d, d, rng),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in &self.projections {
            p.visit(f);
        }
        self.query.visit(f);
        f(&self.key);
        self.value.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in &mut self.projections {
            p.visit_mut(f);
        }
        self.query.visit_mut(f);
        f(&mut self.key);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
    }
}

/// Concatenation baseline: all raw features stacked, one projection, tanh.
#[derive(Debug, Clone)]
pub struct ConcatParams {
    pub projection: AffineParams,
}

impl ConcatParams {
    pub fn init(name: &str, in_dims: &[usize], d: usize, rng: &mut StdRng) -> Self {
        let total: usize = in_dims.iter().sum();
        ConcatParams {
            projection: AffineParams::init(&format!("{name}.proj"), total, d, rng),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.projection.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.projection.visit_mut(f);
    }
}

/// Parameters of one fusion block of any kind.
#[derive(Debug, Clone)]
pub enum BlockParams {
    Laff(LaffBlockParams),
    AttentionFree(AttentionFreeParams),
    Mhsa(MhsaBlockParams),
    Concat(ConcatParams),
}

impl BlockParams {
    fn init(
        kind: FusionBlockKind,
        name: &str,
        in_dims: &[usize],
        d: usize,
        rng: &mut StdRng,
    ) -> Self {
        match kind {
            FusionBlockKind::Laff => BlockParams::Laff(LaffBlockParams::init(name, in_dims, d, rng)),
            FusionBlockKind::AttentionFree => {
                BlockParams::AttentionFree(AttentionFreeParams::init(name, in_dims, d, rng))
            }
            FusionBlockKind::Mhsa => BlockParams::Mhsa(MhsaBlockParams::init(name, in_dims, d, rng)),
            FusionBlockKind::Concat => {
                BlockParams::Concat(ConcatParams::init(name, in_dims, d, rng))
            }
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        match self {
            BlockParams::Laff(p) => p.visit(f),
            BlockParams::AttentionFree(p) => p.visit(f),
            BlockParams::Mhsa(p) => p.visit(f),
            BlockParams::Concat(p) => p.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match self {
            BlockParams::Laff(p) => p.visit_mut(f),
            BlockParams::AttentionFree(p) => p.visit_mut(f),
            BlockParams::Mhsa(p) => p.visit_mut(f),
            BlockParams::Concat(p) => p.visit_mut(f),
        }
    }
}

/// All parameters of one common space.
#[derive(Debug, Clone)]
pub struct SpaceParams {
    /// One frame-level reduction block per frame stream (multi-level only),
    /// in declaration order of the frame-level features.
    pub frame_streams: Vec<LaffBlockParams>,
    pub video_block: BlockParams,
    pub text_block: BlockParams,
}

/// The full trainable model: config plus one `SpaceParams` per space.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub spaces: Vec<SpaceParams>,
}

impl FusionModel {
    /// Build a freshly initialized model. Projection weights draw from
    /// ±1/√fan_in, biases and attention vectors start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.space_dim();
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, 4));
        let video_dims = config.video_block_input_dims();
        let text_dims = config.text_block_input_dims();
        let mut spaces = Vec::with_capacity(config.h);
        for s in 0..config.h {
            let mut frame_streams = Vec::new();
            if config.is_multi_level() {
                for idx in config.frame_feature_indices() {
                    let feat = &config.video_features[idx];
                    frame_streams.push(LaffBlockParams::init(
                        &format!("space{s}.frame.{}", feat.name),
                        &[feat.dim],
                        d,
                        &mut rng,
                    ));
                }
            }
            let video_block = BlockParams::init(
                config.block,
                &format!("space{s}.video"),
                &video_dims,
                d,
                &mut rng,
            );
            let text_block = BlockParams::init(
                config.block,
                &format!("space{s}.text"),
                &text_dims,
                d,
                &mut rng,
            );
            spaces.push(SpaceParams {
                frame_streams,
                video_block,
                text_block,
            });
        }
        Ok(FusionModel {
            config: config.clone(),
            spaces,
        })
    }

    /// Visit every parameter in the canonical order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        for space in &self.spaces {
            for stream in &space.frame_streams {
                stream.visit(f);
            }
            space.video_block.visit(f);
            space.text_block.visit(f);
        }
    }

    /// Mutable visit in the same canonical order.
    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for space in &mut self.spaces {
            for stream in &mut space.frame_streams {
                stream.visit_mut(f);
            }
            space.video_block.visit_mut(f);
            space.text_block.visit_mut(f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param_mut(&mut |p| p.zero_grad());
    }

    /// Number of trainable scalars actually held.
    pub fn param_element_count(&self) -> usize {
        let mut count = 0;
        self.for_each_param(&mut |p| count += p.value.len());
        count
    }

    pub fn all_params_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_param(&mut |p| ok &= p.value.is_finite());
        ok
    }
}
