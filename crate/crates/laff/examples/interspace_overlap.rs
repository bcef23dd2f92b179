//! How different are the learned embedding spaces? For every pair of
//! spaces, the mean Jaccard overlap of their top-5 retrieval sets over
//! the test queries — low off-diagonal values mean the spaces rank
//! videos along genuinely different axes.
//!
//! ```bash
//! cargo run --example interspace_overlap
//! ```

use laff::dataio::{synth_generate, FeatureLevel, SynthSpec};
use laff::evalkit::{build_index, jaccard_interspace};
use laff::fusion::{
    assemble_text_inputs, FusionBlockKind, FusionModel, ModelConfig, TextFeatureDecl,
    VideoFeatureDecl,
};
use laff::optim::{fit, TrainConfig};

fn main() -> laff::Result<()> {
    let mut spec = SynthSpec::desk_default();
    spec.videos = 400;
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
        h: 4,
        d0: 128,
        block: FusionBlockKind::Laff,
        mhsa_heads: 1,
        dropout_rate: 0.2,
    };
    let train_cfg = TrainConfig {
        max_epochs: 15,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = FusionModel::init(&config, train_cfg.seed)?;
    let outcome = fit(model, &store, &manifest, &train_cfg, None)?;

    let videos = manifest.splits.test.clone();
    let captions: Vec<String> = manifest
        .split_captions(laff::dataio::Split::Test)
        .iter()
        .map(|c| c.caption_id.clone())
        .collect();
    let index = build_index(&outcome.best, &store, &videos, 1)?;
    let text_inputs = assemble_text_inputs(&store, &outcome.best.config, &captions)?;
    let (query_spaces, _) = outcome.best.encode_texts(&text_inputs)?;
    let matrix = jaccard_interspace(&query_spaces, &index, 5)?;

    println!("top-5 overlap between the {} spaces:", matrix.len());
    for row in &matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  {}", cells.join("  "));
    }
    let h = matrix.len();
    let mean_off: f64 = (0..h)
        .flat_map(|i| (0..h).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| matrix[i][j])
        .sum::<f64>()
        / (h * h - h) as f64;
    println!("mean off-diagonal overlap: {mean_off:.3}");
    Ok(())
}
