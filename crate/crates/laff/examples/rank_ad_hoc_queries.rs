//! Rank a video collection for ad-hoc queries: build the per-space
//! embedding index once, then order every video by mean per-space cosine
//! for each incoming query.
//!
//! ```bash
//! cargo run --example rank_ad_hoc_queries
//! ```

use laff::dataio::{synth_generate, FeatureLevel, SynthSpec};
use laff::evalkit::{build_index, rank};
use laff::fusion::{
    assemble_text_inputs, FusionBlockKind, FusionModel, ModelConfig, TextFeatureDecl,
    VideoFeatureDecl,
};
use laff::optim::{fit, TrainConfig};

fn main() -> laff::Result<()> {
    let mut spec = SynthSpec::desk_default();
    spec.videos = 300;
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
        max_epochs: 12,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = FusionModel::init(&config, train_cfg.seed)?;
    let model = fit(model, &store, &manifest, &train_cfg, None)?.best;

    // Index the test collection once.
    let index = build_index(&model, &store, &manifest.splits.test, 1)?;
    println!("indexed {} videos in {} spaces\n", index.len(), index.spaces.len());

    // Use a few test captions as stand-ins for ad-hoc queries.
    let queries: Vec<String> = manifest
        .split_captions(laff::dataio::Split::Test)
        .iter()
        .take(3)
        .map(|c| c.caption_id.clone())
        .collect();
    let text_inputs = assemble_text_inputs(&store, &model.config, &queries)?;
    let (query_spaces, _) = model.encode_texts(&text_inputs)?;

    for (q, qid) in queries.iter().enumerate() {
        let per_space: Vec<Vec<f64>> =
            query_spaces.iter().map(|m| m.row(q).to_vec()).collect();
        let ranked = rank(&per_space, &index)?;
        println!("query {qid} (paired video {}):", &qid[..qid.find('#').unwrap()]);
        for (pos, (video, score)) in ranked.iter().take(5).enumerate() {
            println!("  {:>2}. {video}  score {score:.4}", pos + 1);
        }
    }
    Ok(())
}
