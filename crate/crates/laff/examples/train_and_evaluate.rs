//! End-to-end text-to-video retrieval on synthetic features: generate a
//! dataset, train the attentional fusion model, report test metrics.
//!
//! ```bash
//! cargo run --example train_and_evaluate
//! ```

use laff::dataio::{synth_generate, FeatureLevel, SynthSpec};
use laff::evalkit::{evaluate, EvalOptions};
use laff::fusion::{FusionBlockKind, FusionModel, ModelConfig, TextFeatureDecl, VideoFeatureDecl};
use laff::optim::{fit, TrainConfig};

fn main() -> laff::Result<()> {
    let mut spec = SynthSpec::desk_default();
    spec.videos = 500;
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

    let train_cfg = TrainConfig {
        max_epochs: 20,
        base_lr: 1e-3, // a few hundred steps only, so step up from 1e-4
        ..TrainConfig::default()
    };
    let model = FusionModel::init(&config, train_cfg.seed)?;
    println!(
        "training {} parameters across {} spaces of dim {}",
        model.param_element_count(),
        config.h,
        config.space_dim()
    );

    let outcome = fit(model, &store, &manifest, &train_cfg, None)?;
    for record in outcome.log.epochs.iter().step_by(4) {
        println!(
            "epoch {:>2}: loss {:.4}  val mAP {:.4}  lr {:.2e}",
            record.epoch, record.train_loss, record.val.map, record.lr
        );
    }

    let report = evaluate(&outcome.best, &store, &manifest, &EvalOptions::default(), 1)?;
    println!(
        "\ntest: R@1 {:.3}  R@5 {:.3}  R@10 {:.3}  Med r {}  mAP {:.3}  ({} queries over {} videos)",
        report.r1, report.r5, report.r10, report.med_r, report.map, report.queries, report.videos
    );
    Ok(())
}
