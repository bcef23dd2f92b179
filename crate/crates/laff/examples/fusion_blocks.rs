//! Compare the four fusion blocks on one synthetic dataset: the
//! attentional block, its uniform-average counterpart, self-attention
//! over feature tokens, and plain concatenation.
//!
//! ```bash
//! cargo run --example fusion_blocks
//! ```

use laff::dataio::{synth_generate, FeatureLevel, SynthSpec};
use laff::evalkit::{evaluate, EvalOptions};
use laff::fusion::{FusionBlockKind, FusionModel, ModelConfig, TextFeatureDecl, VideoFeatureDecl};
use laff::optim::{fit, TrainConfig};

fn main() -> laff::Result<()> {
    let mut spec = SynthSpec::desk_default();
    spec.videos = 400;
    let (store, manifest) = synth_generate(&spec)?;

    let base = ModelConfig {
        video_features: spec
            .video_features
            .iter()
            .map(|f| VideoFeatureDecl {
                name: f.name.clone(),
                dim: f.dim,
                level: FeatureLevel::Video,
            })
            .collect(),
        text_features: spec
            .text_features
            .iter()
            .map(|f| TextFeatureDecl {
                name: f.name.clone(),
                dim: f.dim,
            })
            .collect(),
        h: 4,
        d0: 128,
        block: FusionBlockKind::Laff,
        mhsa_heads: 4,
        dropout_rate: 0.2,
    };
    let train_cfg = TrainConfig {
        max_epochs: 15,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };

    println!(
        "{:<18} {:>10} {:>7} {:>7} {:>7} {:>6} {:>7}",
        "block", "params", "R@1", "R@5", "R@10", "Med r", "mAP"
    );
    for block in [
        FusionBlockKind::Laff,
        FusionBlockKind::AttentionFree,
        FusionBlockKind::Mhsa,
        FusionBlockKind::Concat,
    ] {
        let config = ModelConfig { block, ..base.clone() };
        let model = FusionModel::init(&config, train_cfg.seed)?;
        let params = model.param_element_count();
        let outcome = fit(model, &store, &manifest, &train_cfg, None)?;
        let report = evaluate(&outcome.best, &store, &manifest, &EvalOptions::default(), 1)?;
        println!(
            "{:<18} {:>10} {:>7.3} {:>7.3} {:>7.3} {:>6} {:>7.3}",
            format!("{block:?}"),
            params,
            report.r1,
            report.r5,
            report.r10,
            report.med_r,
            report.map
        );
    }
    Ok(())
}
