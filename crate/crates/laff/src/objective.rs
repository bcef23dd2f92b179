//! Triplet ranking loss with in-batch hard-negative mining, in two
//! flavors: one loss per space mined on that space's own similarities
//! (their sum is minimized), or a single loss on the fused similarity.

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{GradCheckTarget, Matrix, Mode, Parameter};
use crate::error::{Error, Result};
use crate::fusion::{BatchInputs, FusionModel, TrainForward};

/// Per-space similarity matrices of one batch plus the positive column of
/// every query row.
pub struct BatchSimilarities {
    /// Per space: `queries × videos` cosine matrix.
    pub per_space: Vec<Matrix>,
    /// For each query row, the column of its paired video.
    pub positive_index: Vec<usize>,
}

impl BatchSimilarities {
    /// Build from the forward pass of a paired batch: row `q` of each
    /// similarity matrix scores query `q` against every video in the
    /// batch, and the diagonal holds the positives.
    pub fn from_forward(fwd: &TrainForward) -> Result<Self> {
        let per_space =
            crate::fusion::model::space_similarities(&fwd.text_embeddings, &fwd.video_embeddings)?;
        let n = per_space
            .first()
            .map(|m| m.rows())
            .ok_or_else(|| Error::Degenerate("no spaces in forward pass".into()))?;
        Ok(BatchSimilarities {
            per_space,
            positive_index: (0..n).collect(),
        })
    }

    pub fn queries(&self) -> usize {
        self.positive_index.len()
    }
}

/// Loss values and mining outcome of one batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    /// One entry per mined similarity matrix (h entries for the combined
    /// loss, a single entry for the single-loss variant).
    pub per_space: Vec<f64>,
    /// Sum of `per_space`.
    pub combined: f64,
    /// Per mined matrix, per query: the column of the hardest negative.
    pub hardest: Vec<Vec<usize>>,
}

/// Hard-negative triplet loss on one similarity matrix.
///
/// Per query: the hardest negative is the in-batch video (any column other
/// than the positive) with the largest similarity margin violation, ties
/// resolved toward the lowest column; the query's loss is
/// `max(0, margin + s(hardest) − s(positive))` and the batch loss is the
/// mean over queries. The returned gradient is the exact subgradient with
/// respect to the similarity matrix.
pub fn triplet_hard_loss(
    similarities: &Matrix,
    positive_index: &[usize],
    margin: f64,
) -> Result<(f64, Matrix, Vec<usize>)> {
    if margin <= 0.0 {
        return Err(Error::Config(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let n = similarities.rows();
    let m = similarities.cols();
    if positive_index.len() != n {
        return Err(Error::dim(
            "triplet_hard_loss",
            format!("{} positives for {n} queries", positive_index.len()),
        ));
    }
    if n < 2 || m < 2 {
        return Err(Error::Degenerate(
            "triplet_hard_loss: a batch of one pair has no negatives".into(),
        ));
    }

    let mut grad = Matrix::zeros(n, m);
    let mut hardest = Vec::with_capacity(n);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for q in 0..n {
        let pos = positive_index[q];
        if pos >= m {
            return Err(Error::dim(
                "triplet_hard_loss",
                format!("positive column {pos} out of range (videos: {m})"),
            ));
        }
        let row = similarities.row(q);
        let mut best: Option<(usize, f64)> = None;
        for (j, &s) in row.iter().enumerate() {
            if j == pos {
                continue;
            }
            // strictly-greater keeps the lowest index on ties
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        let (neg, s_neg) = best.expect("at least one negative");
        hardest.push(neg);
        let violation = margin + s_neg - row[pos];
        if violation > 0.0 {
            total += violation;
            grad.set(q, neg, grad.get(q, neg) + inv_n);
            grad.set(q, pos, grad.get(q, pos) - inv_n);
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "triplet_hard_loss: non-finite loss {total}"
        )));
    }
    Ok((total * inv_n, grad, hardest))
}

/// One loss per space, each mined on that space's own similarities; the
/// total is their sum. Returns the per-space similarity gradients.
pub fn combined_loss(
    batch: &BatchSimilarities,
    margin: f64,
) -> Result<(LossReport, Vec<Matrix>)> {
    if batch.per_space.is_empty() {
        return Err(Error::Degenerate("combined_loss: no spaces".into()));
    }
    let mut per_space = Vec::with_capacity(batch.per_space.len());
    let mut hardest = Vec::with_capacity(batch.per_space.len());
    let mut grads = Vec::with_capacity(batch.per_space.len());
    for s in &batch.per_space {
        let (loss, grad, mined) = triplet_hard_loss(s, &batch.positive_index, margin)?;
        per_space.push(loss);
        hardest.push(mined);
        grads.push(grad);
    }
    let combined = per_space.iter().sum();
    Ok((
        LossReport {
            per_space,
            combined,
            hardest,
        },
        grads,
    ))
}

/// The single-loss variant: one triplet loss on the fused similarity
/// `s = (1/h) Σ s_i`. Gradients distribute back to every space scaled by
/// `1/h`.
pub fn single_loss(batch: &BatchSimilarities, margin: f64) -> Result<(LossReport, Vec<Matrix>)> {
    let h = batch.per_space.len();
    if h == 0 {
        return Err(Error::Degenerate("single_loss: no spaces".into()));
    }
    let n = batch.per_space[0].rows();
    let m = batch.per_space[0].cols();
    let mut fused = Matrix::zeros(n, m);
    for s in &batch.per_space {
        fused.add_assign(s);
    }
    fused.scale(1.0 / h as f64);
    let (loss, grad_fused, mined) = triplet_hard_loss(&fused, &batch.positive_index, margin)?;
    let mut grads = Vec::with_capacity(h);
    for _ in 0..h {
        let mut g = grad_fused.clone();
        g.scale(1.0 / h as f64);
        grads.push(g);
    }
    Ok((
        LossReport {
            per_space: vec![loss],
            combined: loss,
            hardest: vec![mined],
        },
        grads,
    ))
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Combined,
    Single,
}

/// Run a full forward + loss on a fixed batch and backpropagate into the
/// model; usable directly and as a gradient-check target. Dropout is
/// forced off so the function is deterministic.
pub struct PairLossTarget<'a> {
    pub model: &'a mut FusionModel,
    pub inputs: BatchInputs,
    pub margin: f64,
    pub mode: LossMode,
}

impl PairLossTarget<'_> {
    fn forward(&self) -> Result<(TrainForward, LossReport, Vec<Matrix>, Vec<Matrix>)> {
        let mut rng = StdRng::seed_from_u64(0); // eval mode draws nothing
        let fwd = self.model.forward_batch(&self.inputs, Mode::Eval, &mut rng)?;
        let sims = BatchSimilarities::from_forward(&fwd)?;
        let (report, grads_s) = match self.mode {
            LossMode::Combined => combined_loss(&sims, self.margin)?,
            LossMode::Single => single_loss(&sims, self.margin)?,
        };
        // Chain similarity gradients to the (normalized) embeddings:
        // S_i = T_i · V_iᵀ, so ∂L/∂T_i = G_i·V_i and ∂L/∂V_i = G_iᵀ·T_i.
        let mut grad_text = Vec::with_capacity(grads_s.len());
        let mut grad_video = Vec::with_capacity(grads_s.len());
        for (i, g) in grads_s.iter().enumerate() {
            grad_text.push(g.matmul(&fwd.video_embeddings[i])?);
            grad_video.push(g.matmul_transpose_a(&fwd.text_embeddings[i])?);
        }
        Ok((fwd, report, grad_video, grad_text))
    }

    /// Forward + backward; gradients land in the model parameters.
    pub fn step(&mut self) -> Result<LossReport> {
        self.model.zero_grads();
        let (fwd, report, grad_video, grad_text) = self.forward()?;
        self.model
            .backward_batch(&fwd, &self.inputs, &grad_video, &grad_text)?;
        Ok(report)
    }
}

impl GradCheckTarget for PairLossTarget<'_> {
    fn loss_and_grads(&mut self) -> Result<f64> {
        Ok(self.step()?.combined)
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.forward()?.1.combined)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.model.for_each_param_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::FeatureLevel;
    use crate::diffmath::grad_check;
    use crate::fusion::{
        FusionBlockKind, ModelConfig, TextFeatureDecl, VideoFeatureDecl, VideoFeatureInput,
    };
    use rand::Rng;

    #[test]
    fn satisfied_margin_gives_zero_loss() {
        let s = Matrix::from_rows(&[&[0.9, 0.5, 0.7], &[0.4, 0.9, 0.5]]);
        let (loss, grad, hardest) = triplet_hard_loss(&s, &[0, 1], 0.2).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(hardest, vec![2, 2]);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn violated_margin_hand_case() {
        // positives 0.6, negatives {0.5, 0.55}: hardest 0.55,
        // loss = 0.2 + 0.55 − 0.6 = 0.15 per query.
        let s = Matrix::from_rows(&[&[0.6, 0.5, 0.55], &[0.5, 0.6, 0.55]]);
        let (loss, grad, hardest) = triplet_hard_loss(&s, &[0, 1], 0.2).unwrap();
        assert!((loss - 0.15).abs() < 1e-15);
        assert_eq!(hardest, vec![2, 2]);
        assert_eq!(grad.get(0, 2), 0.5);
        assert_eq!(grad.get(0, 0), -0.5);
        assert_eq!(grad.get(1, 2), 0.5);
        assert_eq!(grad.get(1, 1), -0.5);
    }

    #[test]
    fn mining_ties_break_to_lowest_column() {
        let s = Matrix::from_rows(&[&[0.1, 0.5, 0.5], &[0.5, 0.1, 0.5]]);
        let (_, _, hardest) = triplet_hard_loss(&s, &[0, 1], 0.2).unwrap();
        assert_eq!(hardest, vec![1, 0]);
    }

    #[test]
    fn batch_of_one_has_no_negatives() {
        let s = Matrix::from_rows(&[&[0.9]]);
        assert!(matches!(
            triplet_hard_loss(&s, &[0], 0.2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn non_positive_margin_is_rejected() {
        let s = Matrix::from_rows(&[&[0.9, 0.1], &[0.1, 0.9]]);
        assert!(matches!(
            triplet_hard_loss(&s, &[0, 1], 0.0),
            Err(Error::Config(_))
        ));
    }

    fn two_space_batch() -> BatchSimilarities {
        BatchSimilarities {
            per_space: vec![
                Matrix::from_rows(&[&[0.6, 0.5, 0.2], &[0.1, 0.7, 0.3], &[0.2, 0.3, 0.8]]),
                Matrix::from_rows(&[&[0.6, 0.1, 0.55], &[0.2, 0.7, 0.6], &[0.5, 0.1, 0.8]]),
            ],
            positive_index: vec![0, 1, 2],
        }
    }

    #[test]
    fn single_space_combined_equals_plain_loss() {
        let batch = BatchSimilarities {
            per_space: vec![Matrix::from_rows(&[&[0.6, 0.5], &[0.4, 0.7]])],
            positive_index: vec![0, 1],
        };
        let (report, _) = combined_loss(&batch, 0.2).unwrap();
        let (plain, _, _) = triplet_hard_loss(&batch.per_space[0], &[0, 1], 0.2).unwrap();
        assert_eq!(report.combined, plain);
        let (single, _) = single_loss(&batch, 0.2).unwrap();
        assert_eq!(single.combined, plain);
    }

    #[test]
    fn duplicated_space_doubles_combined_loss() {
        let s = Matrix::from_rows(&[&[0.6, 0.5, 0.55], &[0.5, 0.6, 0.55], &[0.1, 0.2, 0.9]]);
        let batch = BatchSimilarities {
            per_space: vec![s.clone(), s.clone()],
            positive_index: vec![0, 1, 2],
        };
        let (report, _) = combined_loss(&batch, 0.2).unwrap();
        let (one, _, _) = triplet_hard_loss(&s, &[0, 1, 2], 0.2).unwrap();
        assert_eq!(report.combined, 2.0 * one);
        // The fused matrix equals s here, so the single loss is just one.
        let (single, _) = single_loss(&batch, 0.2).unwrap();
        assert!((single.combined - one).abs() < 1e-15);
    }

    #[test]
    fn per_space_mining_differs_from_fused_mining() {
        // Space 1 mines column 1 for query 0; space 2 mines column 2; the
        // fused matrix mines yet another pattern, so combined ≠ single.
        let batch = two_space_batch();
        let (combined, _) = combined_loss(&batch, 0.2).unwrap();
        let (single, _) = single_loss(&batch, 0.2).unwrap();
        assert_ne!(combined.hardest[0], combined.hardest[1]);
        assert!((combined.combined - single.combined).abs() > 1e-6);
    }

    #[test]
    fn loss_report_is_deterministic() {
        let batch = two_space_batch();
        let (a, _) = combined_loss(&batch, 0.2).unwrap();
        let (b, _) = combined_loss(&batch, 0.2).unwrap();
        assert_eq!(a.combined, b.combined);
        assert_eq!(a.per_space, b.per_space);
        assert_eq!(a.hardest, b.hardest);
    }

    #[test]
    fn positive_rescaling_preserves_active_set() {
        let batch = two_space_batch();
        let (a, _) = combined_loss(&batch, 0.2).unwrap();
        let scaled = BatchSimilarities {
            per_space: batch
                .per_space
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.scale(3.0);
                    s
                })
                .collect(),
            positive_index: batch.positive_index.clone(),
        };
        let (b, _) = combined_loss(&scaled, 0.6).unwrap();
        assert_eq!(a.hardest, b.hardest);
        for (x, y) in a.per_space.iter().zip(&b.per_space) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    fn tiny_model(block: FusionBlockKind, h: usize) -> FusionModel {
        let config = ModelConfig {
            video_features: vec![
                VideoFeatureDecl {
                    name: "va".into(),
                    dim: 3,
                    level: FeatureLevel::Video,
                },
                VideoFeatureDecl {
                    name: "vb".into(),
                    dim: 4,
                    level: FeatureLevel::Video,
                },
            ],
            text_features: vec![
                TextFeatureDecl {
                    name: "ta".into(),
                    dim: 3,
                },
                TextFeatureDecl {
                    name: "tb".into(),
                    dim: 2,
                },
            ],
            h,
            d0: 4 * h,
            block,
            mhsa_heads: 2,
            dropout_rate: 0.0,
        };
        let mut model = FusionModel::init(&config, 12).unwrap();
        // Non-zero attention vectors so the checks exercise that path.
        let mut rng = StdRng::seed_from_u64(99);
        model.for_each_param_mut(&mut |p| {
            if p.name.ends_with(".attn") {
                for v in p.value.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        });
        model
    }

    fn tiny_inputs(model: &FusionModel, n: usize, seed: u64) -> BatchInputs {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| {
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let video = model
            .config
            .video_features
            .iter()
            .map(|f| match f.level {
                FeatureLevel::Video => VideoFeatureInput::Video(mat(n, f.dim)),
                FeatureLevel::Frame => {
                    VideoFeatureInput::Frames((0..n).map(|r| mat(1 + r % 3, f.dim)).collect())
                }
            })
            .collect();
        let text = model
            .config
            .text_features
            .iter()
            .map(|f| mat(n, f.dim))
            .collect();
        BatchInputs { video, text }
    }

    #[test]
    fn full_laff_pair_gradient_matches_finite_differences() {
        let mut model = tiny_model(FusionBlockKind::Laff, 2);
        let inputs = tiny_inputs(&model, 3, 21);
        let mut target = PairLossTarget {
            model: &mut model,
            inputs,
            margin: 0.2,
            mode: LossMode::Combined,
        };
        let report = grad_check(&mut target, 1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn single_loss_gradient_matches_finite_differences() {
        let mut model = tiny_model(FusionBlockKind::Laff, 2);
        let inputs = tiny_inputs(&model, 3, 22);
        let mut target = PairLossTarget {
            model: &mut model,
            inputs,
            margin: 0.2,
            mode: LossMode::Single,
        };
        let report = grad_check(&mut target, 1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn mhsa_pair_gradient_matches_finite_differences() {
        let mut model = tiny_model(FusionBlockKind::Mhsa, 2);
        let inputs = tiny_inputs(&model, 3, 23);
        let mut target = PairLossTarget {
            model: &mut model,
            inputs,
            margin: 0.2,
            mode: LossMode::Combined,
        };
        let report = grad_check(&mut target, 1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn attention_free_pair_gradient_matches_finite_differences() {
        let mut model = tiny_model(FusionBlockKind::AttentionFree, 2);
        let inputs = tiny_inputs(&model, 3, 24);
        let mut target = PairLossTarget {
            model: &mut model,
            inputs,
            margin: 0.2,
            mode: LossMode::Combined,
        };
        let report = grad_check(&mut target, 1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn concat_pair_gradient_matches_finite_differences() {
        let mut model = tiny_model(FusionBlockKind::Concat, 2);
        let inputs = tiny_inputs(&model, 3, 25);
        let mut target = PairLossTarget {
            model: &mut model,
            inputs,
            margin: 0.2,
            mode: LossMode::Combined,
        };
        let report = grad_check(&mut target, 1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn multi_level_pair_gradient_matches_finite_differences() {
        let config = ModelConfig {
            video_features: vec![
                VideoFeatureDecl {
                    name: "va".into(),
                    dim: 3,
                    level: FeatureLevel::Video,
                },
                VideoFeatureDecl {
                    name: "vframes".into(),
                    dim: 4,
                    level: FeatureLevel::Frame,
                },
            ],
            text_features: vec![TextFeatureDecl {
                name: "ta".into(),
                dim: 3,
            }],
            h: 2,
            d0: 8,
            block: FusionBlockKind::Laff,
            mhsa_heads: 1,
            dropout_rate: 0.0,
        };
        let mut model = FusionModel::init(&config, 31).unwrap();
        let mut rng = StdRng::seed_from_u64(77);
        model.for_each_param_mut(&mut |p| {
            if p.name.ends_with(".attn") {
                for v in p.value.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        });
        let inputs = tiny_inputs(&model, 4, 26);
        let mut target = PairLossTarget {
            model: &mut model,
            inputs,
            margin: 0.2,
            mode: LossMode::Combined,
        };
        let report = grad_check(&mut target, 1e-5).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }
}
