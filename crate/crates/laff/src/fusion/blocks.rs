//! Forward and backward passes of the four fusion blocks.
//!
//! All functions operate on batches: each input feature is an `n × dim`
//! matrix with one sample per row, and a block produces an `n × d`
//! embedding plus whatever cache its backward pass needs. Gradients
//! accumulate into the block's `Parameter::grad` buffers; every backward
//! also returns the gradient with respect to each input feature so blocks
//! can be chained (the multi-level hierarchy feeds stream outputs into the
//! video block).

use rand::rngs::StdRng;

use crate::diffmath::{
    dropout_backward, dropout_forward, softmax_rows, softmax_rows_backward, tanh_backward,
    tanh_forward, DropoutMask, Matrix, Mode,
};
use crate::error::{Error, Result};

use super::params::{
    AffineParams, AttentionFreeParams, ConcatParams, LaffBlockParams, MhsaBlockParams,
};

/// Cache of one projection unit: `ê = tanh(dropout(affine(x)))`.
#[derive(Debug)]
pub(crate) struct ProjUnit {
    pub activated: Matrix,
    mask: Option<DropoutMask>,
}

fn project_tanh(
    input: &Matrix,
    params: &AffineParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<ProjUnit> {
    let pre = params.forward(input)?;
    let (dropped, mask) = dropout_forward(&pre, dropout_rate, mode, rng)?;
    Ok(ProjUnit {
        activated: tanh_forward(&dropped),
        mask,
    })
}

fn project_tanh_backward(
    grad_activated: &Matrix,
    unit: &ProjUnit,
    input: &Matrix,
    params: &mut AffineParams,
) -> Result<Matrix> {
    let g_dropped = tanh_backward(grad_activated, &unit.activated);
    let g_pre = match &unit.mask {
        Some(mask) => dropout_backward(&g_dropped, mask),
        None => g_dropped,
    };
    params.backward_accumulate(&g_pre, input)
}

fn check_features(
    op: &'static str,
    features: &[&Matrix],
    params_dims: &[usize],
) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::Degenerate(format!("{op}: empty feature list")));
    }
    if features.len() != params_dims.len() {
        return Err(Error::dim(
            op,
            format!(
                "{} features given, block holds {} projections",
                features.len(),
                params_dims.len()
            ),
        ));
    }
    let n = features[0].rows();
    for (i, feat) in features.iter().enumerate() {
        if feat.rows() != n {
            return Err(Error::dim(
                op,
                format!("feature {i} has {} rows, expected {n}", feat.rows()),
            ));
        }
        if feat.cols() != params_dims[i] {
            return Err(Error::dim(
                op,
                format!(
                    "feature {i} has width {}, projection expects {}",
                    feat.cols(),
                    params_dims[i]
                ),
            ));
        }
    }
    Ok(n)
}

/// `out[r] = Σ_i weights[r,i] · activated_i[r]`, accumulated in feature
/// declaration order. Shared by the attentional and uniform blocks so the
/// two agree bit for bit when the attention logits are all zero.
fn combine_weighted(activated: &[&Matrix], weights: &Matrix) -> Matrix {
    let n = weights.rows();
    let d = activated[0].cols();
    let mut out = Matrix::zeros(n, d);
    for (i, act) in activated.iter().enumerate() {
        for r in 0..n {
            let w = weights.get(r, i);
            for (o, &a) in out.row_mut(r).iter_mut().zip(act.row(r)) {
                *o += w * a;
            }
        }
    }
    out
}

#[derive(Debug)]
pub(crate) struct LaffCache {
    units: Vec<ProjUnit>,
    pub weights: Matrix, // n × k attention weights
}

pub(crate) fn laff_forward_cached(
    features: &[&Matrix],
    params: &LaffBlockParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, LaffCache)> {
    let dims: Vec<usize> = params.projections.iter().map(|p| p.in_dim()).collect();
    let n = check_features("laff_forward", features, &dims)?;
    let k = features.len();
    let mut units = Vec::with_capacity(k);
    for (feat, proj) in features.iter().zip(&params.projections) {
        units.push(project_tanh(feat, proj, dropout_rate, mode, rng)?);
    }
    let w = params.attention.value.row(0);
    let mut logits = Matrix::zeros(n, k);
    for (i, unit) in units.iter().enumerate() {
        for r in 0..n {
            let mut dot = 0.0;
            for (&wv, &av) in w.iter().zip(unit.activated.row(r)) {
                dot += wv * av;
            }
            logits.set(r, i, dot);
        }
    }
    let weights = softmax_rows(&logits);
    let activated: Vec<&Matrix> = units.iter().map(|u| &u.activated).collect();
    let out = combine_weighted(&activated, &weights);
    Ok((out, LaffCache { units, weights }))
}

pub(crate) fn laff_backward(
    upstream: &Matrix,
    features: &[&Matrix],
    params: &mut LaffBlockParams,
    cache: &LaffCache,
) -> Result<Vec<Matrix>> {
    let n = upstream.rows();
    let d = upstream.cols();
    let k = features.len();

    // Gradients wrt the attention weights and the activations.
    let mut grad_weights = Matrix::zeros(n, k);
    let mut grad_act: Vec<Matrix> = (0..k).map(|_| Matrix::zeros(n, d)).collect();
    for (i, unit) in cache.units.iter().enumerate() {
        for r in 0..n {
            let w = cache.weights.get(r, i);
            let mut dot = 0.0;
            for (&u, &a) in upstream.row(r).iter().zip(unit.activated.row(r)) {
                dot += u * a;
            }
            grad_weights.set(r, i, dot);
            for (g, &u) in grad_act[i].row_mut(r).iter_mut().zip(upstream.row(r)) {
                *g += w * u;
            }
        }
    }

    // Through the softmax, then the shared attention vector.
    let grad_logits = softmax_rows_backward(&grad_weights, &cache.weights);
    let attn = params.attention.value.row(0).to_vec();
    for (i, unit) in cache.units.iter().enumerate() {
        for r in 0..n {
            let gz = grad_logits.get(r, i);
            let act_row = unit.activated.row(r);
            let attn_grad = params.attention.grad.row_mut(0);
            for t in 0..d {
                attn_grad[t] += gz * act_row[t];
            }
            for (g, &wv) in grad_act[i].row_mut(r).iter_mut().zip(&attn) {
                *g += gz * wv;
            }
        }
    }

    let mut grad_inputs = Vec::with_capacity(k);
    for i in 0..k {
        grad_inputs.push(project_tanh_backward(
            &grad_act[i],
            &cache.units[i],
            features[i],
            &mut params.projections[i],
        )?);
    }
    Ok(grad_inputs)
}

/// Attentional fusion of `k` features: project each to the common dim,
/// weight them by a softmax over learned per-feature scores, and return
/// the convex combination along with the weights.
pub fn laff_forward(
    features: &[&Matrix],
    params: &LaffBlockParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, Matrix)> {
    let (out, cache) = laff_forward_cached(features, params, dropout_rate, mode, rng)?;
    Ok((out, cache.weights))
}

#[derive(Debug)]
pub(crate) struct AttentionFreeCache {
    units: Vec<ProjUnit>,
}

pub(crate) fn attention_free_forward_cached(
    features: &[&Matrix],
    params: &AttentionFreeParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, AttentionFreeCache)> {
    let dims: Vec<usize> = params.projections.iter().map(|p| p.in_dim()).collect();
    let n = check_features("attention_free_forward", features, &dims)?;
    let k = features.len();
    let mut units = Vec::with_capacity(k);
    for (feat, proj) in features.iter().zip(&params.projections) {
        units.push(project_tanh(feat, proj, dropout_rate, mode, rng)?);
    }
    // Uniform weights written as exp(0)/k: the exact values a zero-logit
    // softmax produces, so this block equals laff with a zero attention
    // vector bit for bit.
    let uniform = Matrix::filled(n, k, 1.0 / k as f64);
    let activated: Vec<&Matrix> = units.iter().map(|u| &u.activated).collect();
    let out = combine_weighted(&activated, &uniform);
    Ok((out, AttentionFreeCache { units }))
}

pub(crate) fn attention_free_backward(
    upstream: &Matrix,
    features: &[&Matrix],
    params: &mut AttentionFreeParams,
    cache: &AttentionFreeCache,
) -> Result<Vec<Matrix>> {
    let k = features.len();
    let inv_k = 1.0 / k as f64;
    let mut grad_inputs = Vec::with_capacity(k);
    for i in 0..k {
        let mut grad_act = upstream.clone();
        grad_act.scale(inv_k);
        grad_inputs.push(project_tanh_backward(
            &grad_act,
            &cache.units[i],
            features[i],
            &mut params.projections[i],
        )?);
    }
    Ok(grad_inputs)
}

/// Uniform-average fusion: the mean of the projected features.
pub fn attention_free_forward(
    features: &[&Matrix],
    params: &AttentionFreeParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<Matrix> {
    let (out, _) = attention_free_forward_cached(features, params, dropout_rate, mode, rng)?;
    Ok(out)
}

#[derive(Debug)]
pub(crate) struct MhsaCache {
    token_masks: Vec<Option<DropoutMask>>, // per feature
    tokens: Vec<Matrix>,                   // per feature, n × d (post dropout)
    per_sample: Vec<MhsaSampleCache>,
}

#[derive(Debug)]
struct MhsaSampleCache {
    q: Matrix,             // k × d
    k: Matrix,             // k × d
    v: Matrix,             // k × d
    attn: Vec<Matrix>,     // per head, k × k softmax output
    concat: Matrix,        // k × d attended values, heads side by side
}

pub(crate) fn mhsa_forward_cached(
    features: &[&Matrix],
    params: &MhsaBlockParams,
    heads: usize,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, MhsaCache)> {
    let dims: Vec<usize> = params.projections.iter().map(|p| p.in_dim()).collect();
    let n = check_features("mhsa_forward", features, &dims)?;
    let k = features.len();
    let d = params.query.out_dim();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "mhsa_forward: {heads} heads do not divide the space dim {d}"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Per-feature token projections (the only dropout site in this block).
    let mut tokens = Vec::with_capacity(k);
    let mut token_masks = Vec::with_capacity(k);
    for (feat, proj) in features.iter().zip(&params.projections) {
        let pre = proj.forward(feat)?;
        let (dropped, mask) = dropout_forward(&pre, dropout_rate, mode, rng)?;
        tokens.push(dropped);
        token_masks.push(mask);
    }

    let mut out = Matrix::zeros(n, d);
    let mut per_sample = Vec::with_capacity(n);
    for r in 0..n {
        // k tokens of this sample.
        let mut t = Matrix::zeros(k, d);
        for (i, tok) in tokens.iter().enumerate() {
            t.row_mut(i).copy_from_slice(tok.row(r));
        }
        let q = params.query.forward(&t)?;
        let kk = crate::diffmath::affine_forward(&t, &params.key.value, None)?;
        let v = params.value.forward(&t)?;

        let mut concat = Matrix::zeros(k, d);
        let mut attn = Vec::with_capacity(heads);
        for hh in 0..heads {
            let lo = hh * dh;
            let mut scores = Matrix::zeros(k, k);
            for a in 0..k {
                for b in 0..k {
                    let mut dot = 0.0;
                    for t_i in 0..dh {
                        dot += q.get(a, lo + t_i) * kk.get(b, lo + t_i);
                    }
                    scores.set(a, b, dot * scale);
                }
            }
            let a_mat = softmax_rows(&scores);
            for a in 0..k {
                for t_i in 0..dh {
                    let mut acc = 0.0;
                    for b in 0..k {
                        acc += a_mat.get(a, b) * v.get(b, lo + t_i);
                    }
                    concat.set(a, lo + t_i, acc);
                }
            }
            attn.push(a_mat);
        }
        let projected = params.output.forward(&concat)?;
        // Mean-pool the k output tokens into the sample embedding.
        let inv_k = 1.0 / k as f64;
        for j in 0..d {
            let mut acc = 0.0;
            for a in 0..k {
                acc += projected.get(a, j);
            }
            out.set(r, j, acc * inv_k);
        }
        per_sample.push(MhsaSampleCache {
            q,
            k: kk,
            v,
            attn,
            concat,
        });
    }
    Ok((
        out,
        MhsaCache {
            token_masks,
            tokens,
            per_sample,
        },
    ))
}

pub(crate) fn mhsa_backward(
    upstream: &Matrix,
    features: &[&Matrix],
    params: &mut MhsaBlockParams,
    heads: usize,
    cache: &MhsaCache,
) -> Result<Vec<Matrix>> {
    let n = upstream.rows();
    let d = upstream.cols();
    let k = features.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut grad_tokens: Vec<Matrix> = (0..k).map(|_| Matrix::zeros(n, d)).collect();
    for r in 0..n {
        let sc = &cache.per_sample[r];
        // Mean pooling spreads the upstream row over the k output tokens.
        let inv_k = 1.0 / k as f64;
        let mut grad_projected = Matrix::zeros(k, d);
        for a in 0..k {
            for (g, &u) in grad_projected.row_mut(a).iter_mut().zip(upstream.row(r)) {
                *g = u * inv_k;
            }
        }
        let grad_concat = params.output.backward_accumulate(&grad_projected, &sc.concat)?;

        let mut grad_q = Matrix::zeros(k, d);
        let mut grad_k = Matrix::zeros(k, d);
        let mut grad_v = Matrix::zeros(k, d);
        for hh in 0..heads {
            let lo = hh * dh;
            let a_mat = &sc.attn[hh];
            // grad wrt attention rows and values.
            let mut grad_a = Matrix::zeros(k, k);
            for a in 0..k {
                for b in 0..k {
                    let mut dot = 0.0;
                    for t_i in 0..dh {
                        dot += grad_concat.get(a, lo + t_i) * sc.v.get(b, lo + t_i);
                    }
                    grad_a.set(a, b, dot);
                    for t_i in 0..dh {
                        let gv = a_mat.get(a, b) * grad_concat.get(a, lo + t_i);
                        grad_v.set(b, lo + t_i, grad_v.get(b, lo + t_i) + gv);
                    }
                }
            }
            let grad_scores = softmax_rows_backward(&grad_a, a_mat);
            for a in 0..k {
                for b in 0..k {
                    let gs = grad_scores.get(a, b) * scale;
                    for t_i in 0..dh {
                        let col = lo + t_i;
                        grad_q.set(a, col, grad_q.get(a, col) + gs * sc.k.get(b, col));
                        grad_k.set(b, col, grad_k.get(b, col) + gs * sc.q.get(a, col));
                    }
                }
            }
        }

        // Rebuild this sample's token matrix for the QKV backward.
        let mut t = Matrix::zeros(k, d);
        for (i, tok) in cache.tokens.iter().enumerate() {
            t.row_mut(i).copy_from_slice(tok.row(r));
        }
        let gt_q = params.query.backward_accumulate(&grad_q, &t)?;
        let key_grads = crate::diffmath::affine_backward(&grad_k, &t, &params.key.value)?;
        params.key.grad.add_assign(&key_grads.weight);
        let gt_k = key_grads.input;
        let gt_v = params.value.backward_accumulate(&grad_v, &t)?;
        for i in 0..k {
            let row = grad_tokens[i].row_mut(r);
            for j in 0..d {
                row[j] += gt_q.get(i, j) + gt_k.get(i, j) + gt_v.get(i, j);
            }
        }
    }

    let mut grad_inputs = Vec::with_capacity(k);
    for i in 0..k {
        let g_pre = match &cache.token_masks[i] {
            Some(mask) => dropout_backward(&grad_tokens[i], mask),
            None => grad_tokens[i].clone(),
        };
        grad_inputs.push(params.projections[i].backward_accumulate(&g_pre, features[i])?);
    }
    Ok(grad_inputs)
}

/// Self-attention fusion over per-feature tokens, mean-pooled to one
/// embedding per sample.
pub fn mhsa_forward(
    features: &[&Matrix],
    params: &MhsaBlockParams,
    heads: usize,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<Matrix> {
    let (out, _) = mhsa_forward_cached(features, params, heads, dropout_rate, mode, rng)?;
    Ok(out)
}

#[derive(Debug)]
pub(crate) struct ConcatCache {
    concatenated: Matrix,
    unit: ProjUnit,
}

pub(crate) fn concat_forward_cached(
    features: &[&Matrix],
    params: &ConcatParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, ConcatCache)> {
    if features.is_empty() {
        return Err(Error::Degenerate("concat_forward: empty feature list".into()));
    }
    let n = features[0].rows();
    let total: usize = features.iter().map(|f| f.cols()).sum();
    if total != params.projection.in_dim() {
        return Err(Error::dim(
            "concat_forward",
            format!(
                "features concatenate to width {total}, projection expects {}",
                params.projection.in_dim()
            ),
        ));
    }
    let mut concatenated = Matrix::zeros(n, total);
    for r in 0..n {
        let row = concatenated.row_mut(r);
        let mut at = 0;
        for feat in features {
            if feat.rows() != n {
                return Err(Error::dim(
                    "concat_forward",
                    format!("feature has {} rows, expected {n}", feat.rows()),
                ));
            }
            row[at..at + feat.cols()].copy_from_slice(feat.row(r));
            at += feat.cols();
        }
    }
    let unit = project_tanh(&concatenated, &params.projection, dropout_rate, mode, rng)?;
    let out = unit.activated.clone();
    Ok((out, ConcatCache { concatenated, unit }))
}

pub(crate) fn concat_backward(
    upstream: &Matrix,
    features: &[&Matrix],
    params: &mut ConcatParams,
    cache: &ConcatCache,
) -> Result<Vec<Matrix>> {
    let grad_concat = project_tanh_backward(
        upstream,
        &cache.unit,
        &cache.concatenated,
        &mut params.projection,
    )?;
    let n = upstream.rows();
    let mut grad_inputs = Vec::with_capacity(features.len());
    let mut at = 0;
    for feat in features {
        let mut g = Matrix::zeros(n, feat.cols());
        for r in 0..n {
            g.row_mut(r)
                .copy_from_slice(&grad_concat.row(r)[at..at + feat.cols()]);
        }
        at += feat.cols();
        grad_inputs.push(g);
    }
    Ok(grad_inputs)
}

/// Concatenation fusion: all features stacked into one vector, a single
/// projection, tanh.
pub fn concat_forward(
    features: &[&Matrix],
    params: &ConcatParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<Matrix> {
    let (out, _) = concat_forward_cached(features, params, dropout_rate, mode, rng)?;
    Ok(out)
}

/// Cache of one frame stream for one sample.
#[derive(Debug)]
pub(crate) struct FrameSampleCache {
    unit: ProjUnit,   // frames × d activations
    weights: Matrix,  // 1 × frames attention over the frames
}

/// Reduce one sample's frame sequence to a single vector: shared
/// projection + tanh on every frame, softmax attention over the frames,
/// convex combination.
pub(crate) fn frame_stream_forward_cached(
    frames: &Matrix,
    params: &LaffBlockParams,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Vec<f64>, FrameSampleCache)> {
    if frames.rows() == 0 {
        return Err(Error::Degenerate(
            "frame_stream_forward: empty frame sequence".into(),
        ));
    }
    if params.projections.len() != 1 {
        return Err(Error::Config(
            "frame stream block must hold exactly one shared projection".into(),
        ));
    }
    let unit = project_tanh(frames, &params.projections[0], dropout_rate, mode, rng)?;
    let t = frames.rows();
    let d = params.space_dim();
    let w = params.attention.value.row(0);
    let mut logits = Matrix::zeros(1, t);
    for fr in 0..t {
        let mut dot = 0.0;
        for (&wv, &av) in w.iter().zip(unit.activated.row(fr)) {
            dot += wv * av;
        }
        logits.set(0, fr, dot);
    }
    let weights = softmax_rows(&logits);
    let mut out = vec![0.0; d];
    for fr in 0..t {
        let a = weights.get(0, fr);
        for (o, &v) in out.iter_mut().zip(unit.activated.row(fr)) {
            *o += a * v;
        }
    }
    Ok((out, FrameSampleCache { unit, weights }))
}

pub(crate) fn frame_stream_backward(
    upstream: &[f64], // d
    frames: &Matrix,
    params: &mut LaffBlockParams,
    cache: &FrameSampleCache,
) -> Result<()> {
    let t = frames.rows();
    let d = upstream.len();

    let mut grad_weights = Matrix::zeros(1, t);
    let mut grad_act = Matrix::zeros(t, d);
    for fr in 0..t {
        let a = cache.weights.get(0, fr);
        let mut dot = 0.0;
        for (&u, &v) in upstream.iter().zip(cache.unit.activated.row(fr)) {
            dot += u * v;
        }
        grad_weights.set(0, fr, dot);
        for (g, &u) in grad_act.row_mut(fr).iter_mut().zip(upstream) {
            *g += a * u;
        }
    }
    let grad_logits = softmax_rows_backward(&grad_weights, &cache.weights);
    let attn = params.attention.value.row(0).to_vec();
    for fr in 0..t {
        let gz = grad_logits.get(0, fr);
        let act_row = cache.unit.activated.row(fr);
        let attn_grad = params.attention.grad.row_mut(0);
        for j in 0..d {
            attn_grad[j] += gz * act_row[j];
        }
        for (g, &wv) in grad_act.row_mut(fr).iter_mut().zip(&attn) {
            *g += gz * wv;
        }
    }
    project_tanh_backward(&grad_act, &cache.unit, frames, &mut params.projections[0])?;
    Ok(())
}
