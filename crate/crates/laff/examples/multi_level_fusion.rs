//! Multi-level fusion: a frame-level feature stream is reduced to a
//! video-level vector by its own attention block (shared projection,
//! softmax over frames), then fused with the video-level features.
//!
//! ```bash
//! cargo run --example multi_level_fusion
//! ```

use laff::dataio::{synth_generate, FeatureLevel, SynthSpec};
use laff::evalkit::{evaluate, EvalOptions};
use laff::fusion::{FusionBlockKind, FusionModel, ModelConfig, TextFeatureDecl, VideoFeatureDecl};
use laff::optim::{fit, TrainConfig};

fn main() -> laff::Result<()> {
    let mut spec = SynthSpec::desk_default();
    spec.videos = 400;
    // Swap one informative video feature for a frame-level stream: six
    // jittered frames per video around the underlying vector.
    spec.video_features[1].level = FeatureLevel::Frame;
    spec.video_features[1].frames = 6;
    let (store, manifest) = synth_generate(&spec)?;

    let config = ModelConfig {
        video_features: spec
            .video_features
            .iter()
            .map(|f| VideoFeatureDecl {
                name: f.name.clone(),
                dim: f.dim,
                level: f.level,
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
        mhsa_heads: 1,
        dropout_rate: 0.2,
    };
    println!(
        "video inputs: {}",
        config
            .video_features
            .iter()
            .map(|f| format!("{} ({:?}, dim {})", f.name, f.level, f.dim))
            .collect::<Vec<_>>()
            .join(", ")
    );

    let train_cfg = TrainConfig {
        max_epochs: 15,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = FusionModel::init(&config, train_cfg.seed)?;
    println!(
        "{} trainable parameters ({} frame-stream blocks per space)",
        model.param_element_count(),
        model.spaces[0].frame_streams.len()
    );
    let outcome = fit(model, &store, &manifest, &train_cfg, None)?;
    let report = evaluate(&outcome.best, &store, &manifest, &EvalOptions::default(), 1)?;
    println!(
        "test: R@1 {:.3}  R@5 {:.3}  R@10 {:.3}  Med r {}  mAP {:.3}",
        report.r1, report.r5, report.r10, report.med_r, report.map
    );
    Ok(())
}
