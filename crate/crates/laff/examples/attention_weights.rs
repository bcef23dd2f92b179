//! Attention weights as an interpretability signal: the dataset carries a
//! pure-noise video feature, training pushes its mean weight down, and
//! weight-driven selection drops it with no retrieval loss.
//!
//! ```bash
//! cargo run --example attention_weights
//! ```

use laff::dataio::{synth_generate, FeatureLevel, Split, SynthSpec};
use laff::evalkit::{evaluate, EvalOptions};
use laff::fusion::{
    average_attention_weights, select_features, FusionBlockKind, FusionModel, ModelConfig,
    TextFeatureDecl, VideoFeatureDecl,
};
use laff::optim::{fit, TrainConfig};

fn main() -> laff::Result<()> {
    let spec = SynthSpec::desk_default(); // includes the v_noise feature
    let (store, manifest) = synth_generate(&spec)?;
    let config = ModelConfig {
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
        h: 8,
        d0: 256,
        block: FusionBlockKind::Laff,
        mhsa_heads: 1,
        dropout_rate: 0.2,
    };
    // Desk-sized epochs hold only a dozen batches, so the attention
    // vectors need a larger step size to move within the early-stop window.
    let train_cfg = TrainConfig {
        base_lr: 1e-2,
        ..TrainConfig::default()
    };

    let model = FusionModel::init(&config, train_cfg.seed)?;
    let outcome = fit(model, &store, &manifest, &train_cfg, None)?;
    let full = evaluate(&outcome.best, &store, &manifest, &EvalOptions::default(), 1)?;

    let weights = average_attention_weights(&outcome.best, &store, &manifest, Split::Test)?;
    println!("mean attention weight per feature (test split):");
    for (name, w) in &weights.video {
        println!("  video {name:<8} {:>6.1}%", 100.0 * w);
    }
    for (name, w) in &weights.text {
        println!("  text  {name:<8} {:>6.1}%", 100.0 * w);
    }

    let keep_video = config.video_features.len() - 1;
    let reduced = select_features(&weights, &config, keep_video, config.text_features.len())?;
    println!(
        "\nkeeping the top {keep_video} video features: [{}]",
        reduced
            .video_features
            .iter()
            .map(|f| f.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );

    let reduced_model = FusionModel::init(&reduced, train_cfg.seed)?;
    let reduced_outcome = fit(reduced_model, &store, &manifest, &train_cfg, None)?;
    let reduced_report = evaluate(
        &reduced_outcome.best,
        &store,
        &manifest,
        &EvalOptions::default(),
        1,
    )?;
    println!(
        "full model:    mAP {:.4}  R@1 {:.4}\nreduced model: mAP {:.4}  R@1 {:.4}",
        full.map, full.r1, reduced_report.map, reduced_report.r1
    );
    Ok(())
}
