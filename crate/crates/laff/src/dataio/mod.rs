//! Feature storage, dataset manifests, batching and the synthetic
//! cross-modal dataset generator.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub mod formats;
pub mod synth;

pub use synth::{synth_generate, SynthFeatureSpec, SynthSpec};

/// Whether a feature carries one vector per item or one vector per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLevel {
    Video,
    Frame,
}

/// Values stored for one named feature.
#[derive(Debug, Clone)]
pub enum FeatureData {
    /// item id → vector of length `dim`
    Video(BTreeMap<String, Vec<f64>>),
    /// item id → (frames × dim) matrix, frames in presentation order
    Frame(BTreeMap<String, Matrix>),
}

/// One named feature space: level, dimensionality and per-item values.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub name: String,
    pub dim: usize,
    pub data: FeatureData,
}

impl FeatureSet {
    pub fn level(&self) -> FeatureLevel {
        match self.data {
            FeatureData::Video(_) => FeatureLevel::Video,
            FeatureData::Frame(_) => FeatureLevel::Frame,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            FeatureData::Video(m) => m.len(),
            FeatureData::Frame(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        match &self.data {
            FeatureData::Video(m) => m.contains_key(id),
            FeatureData::Frame(m) => m.contains_key(id),
        }
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        match &self.data {
            FeatureData::Video(m) => m.get(id).map(|v| v.as_slice()),
            FeatureData::Frame(_) => None,
        }
    }

    pub fn frames(&self, id: &str) -> Option<&Matrix> {
        match &self.data {
            FeatureData::Frame(m) => m.get(id),
            FeatureData::Video(_) => None,
        }
    }
}

/// Named per-modality feature spaces keyed by feature name.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    sets: BTreeMap<String, FeatureSet>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, set: FeatureSet) -> Result<()> {
        if self.sets.contains_key(&set.name) {
            return Err(Error::Config(format!(
                "feature {:?} registered twice",
                set.name
            )));
        }
        self.sets.insert(set.name.clone(), set);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&FeatureSet> {
        self.sets.get(name).ok_or_else(|| {
            Error::Config(format!("feature {name:?} not present in the store"))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// One caption paired with its video.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Train/val/test assignment over video ids.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

/// Dataset description: videos, captions, splits and the feature names the
/// dataset provides for each modality.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetManifest {
    pub videos: Vec<String>,
    pub captions: Vec<CaptionRecord>,
    pub splits: Splits,
    pub video_features: Vec<String>,
    pub text_features: Vec<String>,
}

impl DatasetManifest {
    /// Structural checks: caption targets exist, splits are disjoint and
    /// cover only known videos.
    pub fn validate(&self) -> Result<()> {
        let video_set: BTreeSet<&str> = self.videos.iter().map(|s| s.as_str()).collect();
        if video_set.len() != self.videos.len() {
            return Err(Error::Config("manifest lists a video id twice".into()));
        }
        let mut caption_ids = BTreeSet::new();
        for c in &self.captions {
            if c.caption_id.is_empty() || c.video_id.is_empty() {
                return Err(Error::Config("empty id in caption record".into()));
            }
            if !caption_ids.insert(c.caption_id.as_str()) {
                return Err(Error::Config(format!(
                    "caption id {:?} listed twice",
                    c.caption_id
                )));
            }
            if !video_set.contains(c.video_id.as_str()) {
                return Err(Error::Config(format!(
                    "caption {:?} references unknown video {:?}",
                    c.caption_id, c.video_id
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for (name, ids) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for id in ids {
                if !video_set.contains(id.as_str()) {
                    return Err(Error::Config(format!(
                        "split {name} references unknown video {id:?}"
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Config(format!(
                        "video {id:?} assigned to more than one split"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check that every declared feature exists in the store at the right
    /// level and covers every id it will be asked for.
    pub fn validate_against(&self, store: &FeatureStore) -> Result<()> {
        for name in &self.video_features {
            let set = store.get(name)?;
            for v in &self.videos {
                if !set.contains(v) {
                    return Err(Error::Config(format!(
                        "video feature {name:?} is missing id {v:?}"
                    )));
                }
            }
        }
        for name in &self.text_features {
            let set = store.get(name)?;
            if set.level() != FeatureLevel::Video {
                return Err(Error::Config(format!(
                    "text feature {name:?} must be sentence-level"
                )));
            }
            for c in &self.captions {
                if !set.contains(&c.caption_id) {
                    return Err(Error::Config(format!(
                        "text feature {name:?} is missing caption {:?}",
                        c.caption_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split_videos(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    /// Captions whose video belongs to the split, in manifest order.
    pub fn split_captions(&self, split: Split) -> Vec<&CaptionRecord> {
        let ids: BTreeSet<&str> = self
            .split_videos(split)
            .iter()
            .map(|s| s.as_str())
            .collect();
        self.captions
            .iter()
            .filter(|c| ids.contains(c.video_id.as_str()))
            .collect()
    }
}

/// Elementwise arithmetic mean over the frame rows.
pub fn mean_pool_frames(frames: &Matrix) -> Result<Vec<f64>> {
    if frames.rows() == 0 {
        return Err(Error::Degenerate(
            "mean_pool_frames: empty frame sequence".into(),
        ));
    }
    let mut out = vec![0.0; frames.cols()];
    for r in 0..frames.rows() {
        for (o, &v) in out.iter_mut().zip(frames.row(r)) {
            *o += v;
        }
    }
    let inv = 1.0 / frames.rows() as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// Stable seed derivation so independent random streams never share state.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 over the xor of seed and a spread-out stream tag.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One training pair.
pub type Pair = (String, String); // (caption_id, video_id)

/// Shuffle the split's caption/video pairs with a (seed, epoch)-keyed
/// permutation and chunk them. A trailing batch shorter than `batch_size`
/// is kept when it still holds at least two pairs (mining needs a
/// negative) and dropped otherwise.
pub fn make_batches(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<Pair>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let captions = manifest.split_captions(split);
    if captions.is_empty() {
        return Err(Error::Degenerate(format!(
            "split {split:?} has no captions"
        )));
    }
    let mut pairs: Vec<Pair> = captions
        .iter()
        .map(|c| (c.caption_id.clone(), c.video_id.clone()))
        .collect();
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, 0x8000_0000 + epoch as u64));
    pairs.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut it = pairs.into_iter().peekable();
    while it.peek().is_some() {
        let chunk: Vec<Pair> = it.by_ref().take(batch_size).collect();
        if chunk.len() >= 2 {
            batches.push(chunk);
        }
    }
    Ok(batches)
}
