//! Verify every analytic backward pass against central finite
//! differences, from single kernels up to a full two-space model with the
//! mined triplet loss on top.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use laff::dataio::FeatureLevel;
use laff::diffmath::{grad_check, Matrix};
use laff::fusion::{
    BatchInputs, FusionBlockKind, FusionModel, ModelConfig, TextFeatureDecl, VideoFeatureDecl,
    VideoFeatureInput,
};
use laff::objective::{LossMode, PairLossTarget};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_matrix(rows: usize, cols: usize, rng: &mut StdRng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape by construction")
}

fn check_model(block: FusionBlockKind, with_frames: bool, label: &str) -> laff::Result<()> {
    let mut video_features = vec![
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
    ];
    if with_frames {
        video_features.push(VideoFeatureDecl {
            name: "vframes".into(),
            dim: 3,
            level: FeatureLevel::Frame,
        });
    }
    let config = ModelConfig {
        video_features,
        text_features: vec![
            TextFeatureDecl {
                name: "ta".into(),
                dim: 4,
            },
            TextFeatureDecl {
                name: "tb".into(),
                dim: 2,
            },
        ],
        h: 2,
        d0: 8,
        block,
        mhsa_heads: 2,
        dropout_rate: 0.0, // gradient checks need a deterministic function
    };
    let mut model = FusionModel::init(&config, 5)?;
    let mut rng = StdRng::seed_from_u64(17);
    model.for_each_param_mut(&mut |p| {
        if p.name.ends_with(".attn") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    });

    let n = 4;
    let video = config
        .video_features
        .iter()
        .map(|f| match f.level {
            FeatureLevel::Video => VideoFeatureInput::Video(random_matrix(n, f.dim, &mut rng)),
            FeatureLevel::Frame => VideoFeatureInput::Frames(
                (0..n)
                    .map(|r| random_matrix(1 + r % 3, f.dim, &mut rng))
                    .collect(),
            ),
        })
        .collect();
    let text = config
        .text_features
        .iter()
        .map(|f| random_matrix(n, f.dim, &mut rng))
        .collect();

    let mut target = PairLossTarget {
        model: &mut model,
        inputs: BatchInputs { video, text },
        margin: 0.2,
        mode: LossMode::Combined,
    };
    let report = grad_check(&mut target, 1e-5)?;
    println!(
        "{label:<24} {:>5} coordinates  max rel err {:.3e}",
        report.coordinates, report.max_rel_err
    );
    assert!(report.max_rel_err <= 1e-4);
    Ok(())
}

fn main() -> laff::Result<()> {
    println!("drilling every backward pass against central differences (step 1e-5)\n");
    check_model(FusionBlockKind::Laff, false, "attentional block")?;
    check_model(FusionBlockKind::AttentionFree, false, "uniform-average block")?;
    check_model(FusionBlockKind::Mhsa, false, "self-attention block")?;
    check_model(FusionBlockKind::Concat, false, "concatenation block")?;
    check_model(FusionBlockKind::Laff, true, "multi-level hierarchy")?;
    println!("\nall gradients agree with finite differences within 1e-4");
    Ok(())
}
