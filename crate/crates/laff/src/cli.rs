//! Command implementations behind the `laff` binary: one JSON run config,
//! dotted-path overrides, and the `synth | train | eval | weights |
//! select | rank | jaccard` commands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::formats::{load_features, save_features_binary};
use crate::dataio::{synth_generate, DatasetManifest, FeatureStore, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::evalkit::{
    build_index, evaluate, jaccard_interspace, rank_all, write_ranked_tsv, EvalOptions,
};
use crate::fusion::{
    assemble_text_inputs, average_attention_weights, load_model, save_model, select_features,
    FusionModel, ModelConfig,
};
use crate::optim::{fit, TrainConfig};

/// File locations a command may need.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Paths {
    /// Directory holding one feature file per feature name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Model file to load (eval / weights / select / rank / jaccard).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Output directory; every command writes only below it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Directory of query feature files (rank).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Features to keep per modality; modality-specific values win.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m_video: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m_text: Option<usize>,
    /// Split whose samples provide the average weights.
    #[serde(default = "default_select_split")]
    pub split: Split,
}

fn default_select_split() -> Split {
    Split::Train
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            top_m: None,
            top_m_video: None,
            top_m_text: None,
            split: Split::Train,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankOptions {
    /// Which videos form the collection: a split name or "all".
    #[serde(default = "default_rank_collection")]
    pub collection: String,
}

fn default_rank_collection() -> String {
    "test".into()
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            collection: default_rank_collection(),
        }
    }
}

/// Everything one run needs, loadable from a single JSON file with
/// dotted-path overrides on top.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when present it overrides `train.seed` and `synth.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub select: SelectOptions,
    #[serde(default)]
    pub rank: RankOptions,
}

fn default_threads() -> usize {
    1
}

/// Parse an override value: valid JSON is taken as-is, anything else
/// becomes a string.
fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Set `root.path.to.key = value`, creating objects along the way.
pub fn set_json_path(root: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut current = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {dotted:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Ok(index) = part.parse::<usize>() {
            let arr = current.as_array_mut().ok_or_else(|| {
                Error::Config(format!("override {dotted:?}: {part} indexes a non-array"))
            })?;
            if index >= arr.len() {
                return Err(Error::Config(format!(
                    "override {dotted:?}: index {index} out of bounds"
                )));
            }
            if last {
                arr[index] = value;
                return Ok(());
            }
            current = &mut arr[index];
        } else {
            if !current.is_object() {
                return Err(Error::Config(format!(
                    "override {dotted:?}: {part} indexes a non-object"
                )));
            }
            let obj = current.as_object_mut().unwrap();
            if last {
                obj.insert(part.to_string(), value);
                return Ok(());
            }
            current = obj
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

/// Load the run config: file first (when given), then `--set` overrides.
pub fn load_run_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text)?
        }
        None => Value::Object(Default::default()),
    };
    for (key, raw) in overrides {
        set_json_path(&mut value, key, parse_override(raw))?;
    }
    let mut config: RunConfig = serde_json::from_value(value)?;
    if let Some(seed) = config.seed {
        config.train.seed = seed;
        if let Some(synth) = config.synth.as_mut() {
            synth.seed = seed;
        }
    }
    Ok(config)
}

fn require<'a, T>(opt: &'a Option<T>, what: &str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::Config(format!("missing {what} in the run config")))
}

fn require_existing(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn out_dir(config: &RunConfig) -> Result<&PathBuf> {
    require(&config.paths.out, "paths.out (output directory)")
}

fn prepare_out(config: &RunConfig) -> Result<PathBuf> {
    let dir = out_dir(config)?;
    std::fs::create_dir_all(dir)?;
    Ok(dir.clone())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    require_existing(path, "manifest")?;
    let text = std::fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    Ok(manifest)
}

fn feature_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let binary = dir.join(format!("{name}.lftr"));
    if binary.exists() {
        return Ok(binary);
    }
    let text = dir.join(format!("{name}.txt"));
    if text.exists() {
        return Ok(text);
    }
    Err(Error::Config(format!(
        "no feature file for {name:?} under {} (tried {name}.lftr and {name}.txt)",
        dir.display()
    )))
}

/// Load exactly the features a model declares, validating dims and levels.
fn load_store_for_model(
    features_dir: &Path,
    model_config: &ModelConfig,
    manifest: &DatasetManifest,
) -> Result<FeatureStore> {
    require_existing(features_dir, "features directory")?;
    let mut store = FeatureStore::new();
    for decl in &model_config.video_features {
        if !manifest.video_features.contains(&decl.name) {
            return Err(Error::Config(format!(
                "dataset does not declare video feature {:?}",
                decl.name
            )));
        }
        let path = feature_file(features_dir, &decl.name)?;
        store.insert(load_features(&path, &decl.name, decl.dim, decl.level)?)?;
    }
    for decl in &model_config.text_features {
        if !manifest.text_features.contains(&decl.name) {
            return Err(Error::Config(format!(
                "dataset does not declare text feature {:?}",
                decl.name
            )));
        }
        let path = feature_file(features_dir, &decl.name)?;
        store.insert(load_features(
            &path,
            &decl.name,
            decl.dim,
            crate::dataio::FeatureLevel::Video,
        )?)?;
    }
    Ok(store)
}

/// The manifest restricted to the features the model actually uses, so a
/// reduced model can train against a dataset that offers more features.
fn manifest_for_model(manifest: &DatasetManifest, config: &ModelConfig) -> DatasetManifest {
    let mut trimmed = manifest.clone();
    trimmed.video_features = config.video_features.iter().map(|f| f.name.clone()).collect();
    trimmed.text_features = config.text_features.iter().map(|f| f.name.clone()).collect();
    trimmed
}

fn dataset_for_model(config: &RunConfig) -> Result<(FeatureStore, DatasetManifest, ModelConfig)> {
    let model_config = require(&config.model, "model config")?.clone();
    model_config.validate()?;
    let manifest = load_manifest(require(&config.paths.manifest, "paths.manifest")?)?;
    let features_dir = require(&config.paths.features, "paths.features")?;
    let store = load_store_for_model(features_dir, &model_config, &manifest)?;
    let trimmed = manifest_for_model(&manifest, &model_config);
    trimmed.validate_against(&store)?;
    Ok((store, trimmed, model_config))
}

fn load_model_file(config: &RunConfig) -> Result<FusionModel> {
    let path = require(&config.paths.model, "paths.model")?;
    require_existing(path, "model file")?;
    load_model(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

/// Generate a synthetic dataset: feature files, manifest and spec echo.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let spec = require(&config.synth, "synth spec")?;
    let out = prepare_out(config)?;
    let (store, manifest) = synth_generate(spec)?;
    let features_dir = out.join("features");
    std::fs::create_dir_all(&features_dir)?;
    for name in store.names() {
        let set = store.get(name)?;
        save_features_binary(set, &features_dir.join(format!("{name}.lftr")))?;
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("synth_spec.json"), spec)?;
    println!(
        "synth: {} videos, {} captions, {} features -> {}",
        manifest.videos.len(),
        manifest.captions.len(),
        store.len(),
        out.display()
    );
    Ok(())
}

/// Train from scratch and write the best checkpoint plus the log.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let (store, manifest, model_config) = dataset_for_model(config)?;
    let out = prepare_out(config)?;
    let model = FusionModel::init(&model_config, config.train.seed)?;
    let log_path = out.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path)?);
    let outcome = fit(
        model,
        &store,
        &manifest,
        &config.train,
        Some(&mut log_file),
    )?;
    log_file.flush()?;
    drop(log_file);
    let model_path = out.join("model.laff");
    save_model(&outcome.best, &model_path)?;
    println!(
        "train: {} epochs, best validation metric {:.6} -> {}",
        outcome.log.epochs.len(),
        outcome.best_metric,
        model_path.display()
    );
    Ok(())
}

/// Evaluate a trained model on a split and write the report.
pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let model = load_model_file(config)?;
    let mut run = config.clone();
    run.model = Some(model.config.clone());
    let (store, manifest, _) = dataset_for_model(&run)?;
    let out = prepare_out(config)?;
    let report = evaluate(&model, &store, &manifest, &config.eval, config.threads)?;
    write_json(&out.join("eval_report.json"), &report)?;
    if let Some(lists) = &report.ranked_lists {
        let mut tsv = BufWriter::new(File::create(out.join("ranked.tsv"))?);
        for record in lists {
            for (pos, (id, score)) in record.ranking.iter().zip(&record.scores).enumerate() {
                writeln!(tsv, "{}\t{}\t{}\t{:.6}", record.query_id, pos + 1, id, score)?;
            }
        }
        tsv.flush()?;
    }
    println!(
        "eval[{:?}]: R@1 {:.4} R@5 {:.4} R@10 {:.4} MedR {} mAP {:.4} ({} queries, {} videos)",
        report.split, report.r1, report.r5, report.r10, report.med_r, report.map,
        report.queries, report.videos
    );
    Ok(())
}

/// Average attention weights per feature, as JSON and chartable CSV.
pub fn cmd_weights(config: &RunConfig) -> Result<()> {
    let model = load_model_file(config)?;
    let mut run = config.clone();
    run.model = Some(model.config.clone());
    let (store, manifest, _) = dataset_for_model(&run)?;
    let out = prepare_out(config)?;
    let weights = average_attention_weights(&model, &store, &manifest, config.eval.split)?;
    write_json(&out.join("attention_weights.json"), &weights)?;
    let mut csv = BufWriter::new(File::create(out.join("attention_weights.csv"))?);
    writeln!(csv, "modality,feature,weight")?;
    for (name, w) in &weights.video {
        writeln!(csv, "video,{name},{w:.6}")?;
    }
    for (name, w) in &weights.text {
        writeln!(csv, "text,{name},{w:.6}")?;
    }
    csv.flush()?;
    let fmt = |pairs: &[(String, f64)]| {
        pairs
            .iter()
            .map(|(n, w)| format!("{n} {:.1}%", 100.0 * w))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("weights[video]: {}", fmt(&weights.video));
    println!("weights[text]:  {}", fmt(&weights.text));
    Ok(())
}

/// Keep the top-m features per modality and emit a ready-to-train config.
pub fn cmd_select(config: &RunConfig) -> Result<()> {
    let model = load_model_file(config)?;
    let mut run = config.clone();
    run.model = Some(model.config.clone());
    let (store, manifest, _) = dataset_for_model(&run)?;
    let out = prepare_out(config)?;
    let top_video = config
        .select
        .top_m_video
        .or(config.select.top_m)
        .ok_or_else(|| Error::Config("missing select.top_m (or --top-m)".into()))?;
    let top_text = config.select.top_m_text.or(config.select.top_m).unwrap();
    let weights = average_attention_weights(&model, &store, &manifest, config.select.split)?;
    let reduced = select_features(&weights, &model.config, top_video, top_text)?;
    let mut reduced_run = config.clone();
    reduced_run.model = Some(reduced.clone());
    reduced_run.paths.model = None;
    write_json(&out.join("config.selected.json"), &reduced_run)?;
    println!(
        "select: kept video [{}], text [{}] -> {}",
        reduced
            .video_features
            .iter()
            .map(|f| f.name.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        reduced
            .text_features
            .iter()
            .map(|f| f.name.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        out.join("config.selected.json").display()
    );
    Ok(())
}

fn collection_videos<'a>(manifest: &'a DatasetManifest, which: &str) -> Result<Vec<String>> {
    match which {
        "all" => Ok(manifest.videos.clone()),
        split => Ok(manifest.split_videos(Split::parse(split)?).to_vec()),
    }
}

/// Rank the indexed collection for ad-hoc queries given as feature files
/// (one file per declared text feature, identical id sets).
pub fn cmd_rank(config: &RunConfig) -> Result<()> {
    let model = load_model_file(config)?;
    let mut run = config.clone();
    run.model = Some(model.config.clone());
    let (store, manifest, _) = dataset_for_model(&run)?;
    let out = prepare_out(config)?;
    let queries_dir = require(&config.paths.queries, "paths.queries")?;
    require_existing(queries_dir, "queries directory")?;

    let mut query_store = FeatureStore::new();
    for decl in &model.config.text_features {
        let path = feature_file(queries_dir, &decl.name)?;
        query_store.insert(load_features(
            &path,
            &decl.name,
            decl.dim,
            crate::dataio::FeatureLevel::Video,
        )?)?;
    }
    // All query files must agree on the id set; ids rank in sorted order.
    let first = query_store.get(&model.config.text_features[0].name)?;
    let query_ids: Vec<String> = match &first.data {
        crate::dataio::FeatureData::Video(map) => map.keys().cloned().collect(),
        _ => unreachable!("text features are video-level"),
    };
    if query_ids.is_empty() {
        return Err(Error::Degenerate("queries directory holds no queries".into()));
    }
    for decl in &model.config.text_features {
        let set = query_store.get(&decl.name)?;
        if set.len() != query_ids.len() || !query_ids.iter().all(|id| set.contains(id)) {
            return Err(Error::Config(format!(
                "query feature {:?} does not cover the same ids as {:?}",
                decl.name, model.config.text_features[0].name
            )));
        }
    }

    let videos = collection_videos(&manifest, &config.rank.collection)?;
    let index = build_index(&model, &store, &videos, config.threads)?;
    let text_inputs = assemble_text_inputs(&query_store, &model.config, &query_ids)?;
    let (query_spaces, _) = model.encode_texts(&text_inputs)?;
    let rankings = rank_all(&query_ids, &query_spaces, &index, config.threads)?;
    let tsv_path = out.join("ranked.tsv");
    let mut tsv = BufWriter::new(File::create(&tsv_path)?);
    write_ranked_tsv(&mut tsv, &rankings)?;
    tsv.flush()?;
    println!(
        "rank: {} queries over {} videos -> {}",
        query_ids.len(),
        videos.len(),
        tsv_path.display()
    );
    Ok(())
}

/// Pairwise overlap of the per-space top-k results, as an h×h matrix.
pub fn cmd_jaccard(config: &RunConfig) -> Result<()> {
    let model = load_model_file(config)?;
    let mut run = config.clone();
    run.model = Some(model.config.clone());
    let (store, manifest, _) = dataset_for_model(&run)?;
    let out = prepare_out(config)?;
    let split = config.eval.split;
    let videos = manifest.split_videos(split).to_vec();
    let captions: Vec<String> = manifest
        .split_captions(split)
        .iter()
        .map(|c| c.caption_id.clone())
        .collect();
    if videos.is_empty() || captions.is_empty() {
        return Err(Error::Degenerate(format!("split {split:?} is empty")));
    }
    let index = build_index(&model, &store, &videos, config.threads)?;
    let text_inputs = assemble_text_inputs(&store, &model.config, &captions)?;
    let (query_spaces, _) = model.encode_texts(&text_inputs)?;
    let matrix = jaccard_interspace(&query_spaces, &index, config.eval.jaccard_k)?;

    #[derive(Serialize)]
    struct JaccardReport {
        split: Split,
        k: usize,
        spaces: usize,
        matrix: Vec<Vec<f64>>,
    }
    write_json(
        &out.join("jaccard.json"),
        &JaccardReport {
            split,
            k: config.eval.jaccard_k,
            spaces: matrix.len(),
            matrix: matrix.clone(),
        },
    )?;
    let mut mean_off = 0.0;
    let h = matrix.len();
    for i in 0..h {
        for j in 0..h {
            if i != j {
                mean_off += matrix[i][j];
            }
        }
    }
    mean_off /= (h * h - h) as f64;
    println!("jaccard[{split:?}]: {h}x{h} matrix, mean off-diagonal {mean_off:.4}");
    Ok(())
}

/// Dispatch a parsed invocation.
pub fn run_command(command: &str, config: &RunConfig) -> Result<()> {
    match command {
        "synth" => cmd_synth(config),
        "train" => cmd_train(config),
        "eval" => cmd_eval(config),
        "weights" => cmd_weights(config),
        "select" => cmd_select(config),
        "rank" => cmd_rank(config),
        "jaccard" => cmd_jaccard(config),
        other => Err(Error::Config(format!(
            "unknown command {other:?}; expected synth|train|eval|weights|select|rank|jaccard"
        ))),
    }
}

/// Parsed command line.
pub struct CliInvocation {
    pub command: String,
    pub config: RunConfig,
}

pub const USAGE: &str = "\
usage: laff <command> [options]

commands:
  synth     generate a synthetic dataset (features + manifest)
  train     train a fusion model and save the best checkpoint
  eval      compute R@K / median rank / mAP on a split
  weights   average attention weight per feature
  select    keep the top-m features per modality, emit a reduced config
  rank      rank a video collection for ad-hoc query feature files
  jaccard   pairwise top-k overlap between the embedding spaces

options:
  --config PATH     JSON run config (defaults applied for missing keys)
  --out DIR         output directory (everything is written below it)
  --seed N          master seed (overrides train.seed and synth.seed)
  --threads N       worker threads for ranking/evaluation paths
  --set K=V         dotted-path config override, e.g. --set model.h=4
  --queries PATH    query feature directory (rank)
  --top-m N         features to keep per modality (select)
  --split NAME      split shorthand for eval/weights/jaccard (train|val|test)
";

/// Parse `args` (without the program name) into a command and config.
pub fn parse_args(args: &[String]) -> Result<CliInvocation> {
    if args.is_empty() {
        return Err(Error::Config(format!("no command given\n{USAGE}")));
    }
    let command = args[0].clone();
    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut flag_sets: Vec<(String, String)> = Vec::new();

    let mut i = 1;
    let next_value = |i: &mut usize, flag: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{flag} needs a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--config" => config_path = Some(PathBuf::from(next_value(&mut i, "--config")?)),
            "--out" => {
                let v = next_value(&mut i, "--out")?;
                flag_sets.push(("paths.out".into(), v));
            }
            "--seed" => {
                let v = next_value(&mut i, "--seed")?;
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("--seed expects an integer, got {v:?}")))?;
                flag_sets.push(("seed".into(), v));
            }
            "--threads" => {
                let v = next_value(&mut i, "--threads")?;
                v.parse::<usize>().map_err(|_| {
                    Error::Config(format!("--threads expects an integer, got {v:?}"))
                })?;
                flag_sets.push(("threads".into(), v));
            }
            "--set" => {
                let pair = next_value(&mut i, "--set")?;
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("--set expects key=value, got {pair:?}"))
                })?;
                overrides.push((key.to_string(), value.to_string()));
            }
            "--queries" => {
                let v = next_value(&mut i, "--queries")?;
                flag_sets.push(("paths.queries".into(), v));
            }
            "--top-m" => {
                let v = next_value(&mut i, "--top-m")?;
                flag_sets.push(("select.top_m".into(), v));
            }
            "--split" => {
                let v = next_value(&mut i, "--split")?;
                flag_sets.push(("eval.split".into(), v.clone()));
                flag_sets.push(("select.split".into(), v));
            }
            other => {
                return Err(Error::Config(format!("unknown option {other:?}\n{USAGE}")));
            }
        }
        i += 1;
    }
    // Flags win over --set, which wins over the file.
    overrides.extend(flag_sets);
    let config = load_run_config(config_path.as_deref(), &overrides)?;
    Ok(CliInvocation { command, config })
}

/// Summaries of the store the commands print, kept here so the binary
/// stays a thin wrapper.
pub fn describe_store(store: &FeatureStore) -> BTreeMap<String, (usize, usize)> {
    store
        .names()
        .map(|n| {
            let set = store.get(n).expect("name from the store");
            (n.to_string(), (set.dim, set.len()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let config = load_run_config(
            None,
            &[
                ("threads".into(), "4".into()),
                ("train.margin".into(), "0.3".into()),
                ("paths.out".into(), "/tmp/x".into()),
                ("train.margin".into(), "0.4".into()),
            ],
        )
        .unwrap();
        assert_eq!(config.threads, 4);
        assert_eq!(config.train.margin, 0.4);
        assert_eq!(config.paths.out.as_deref(), Some(Path::new("/tmp/x")));
    }

    #[test]
    fn master_seed_propagates() {
        let config = load_run_config(
            None,
            &[
                ("seed".into(), "123".into()),
                ("synth".into(), serde_json::to_string(&SynthSpec::desk_default()).unwrap()),
            ],
        )
        .unwrap();
        assert_eq!(config.train.seed, 123);
        assert_eq!(config.synth.unwrap().seed, 123);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let err = load_run_config(None, &[("bogus".into(), "1".into())]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn parse_args_collects_flags() {
        let args: Vec<String> = ["eval", "--out", "/tmp/o", "--threads", "2", "--set", "eval.jaccard=true"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let inv = parse_args(&args).unwrap();
        assert_eq!(inv.command, "eval");
        assert_eq!(inv.config.threads, 2);
        assert!(inv.config.eval.jaccard);
    }

    #[test]
    fn bad_flag_is_rejected() {
        let args: Vec<String> = ["train", "--nope"].iter().map(|s| s.to_string()).collect();
        assert!(parse_args(&args).is_err());
    }

    #[test]
    fn json_path_setter_handles_nesting() {
        let mut v = serde_json::json!({});
        set_json_path(&mut v, "a.b.c", serde_json::json!(5)).unwrap();
        assert_eq!(v["a"]["b"]["c"], 5);
        set_json_path(&mut v, "a.b.c", serde_json::json!(7)).unwrap();
        assert_eq!(v["a"]["b"]["c"], 7);
        assert!(set_json_path(&mut v, "a..c", serde_json::json!(1)).is_err());
    }
}
