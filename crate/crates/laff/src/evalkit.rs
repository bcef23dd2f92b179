//! Ranking and retrieval metrics: the embedding index, R@K / median rank /
//! mAP, inter-space Jaccard diagnostics and report assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetManifest, FeatureStore, Split};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::fusion::{
    assemble_text_inputs, assemble_video_inputs, average_attention_weights, AverageAttentionWeights,
    FusionModel,
};

pub use crate::fusion::select_features;

/// Per-space unit-row embedding matrices of a video collection.
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    /// Per space: `videos × d`, row order matching `ids`.
    pub spaces: Vec<Matrix>,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Split a length into at most `threads` contiguous chunks.
fn chunk_bounds(len: usize, threads: usize) -> Vec<(usize, usize)> {
    let threads = threads.max(1).min(len.max(1));
    let base = len / threads;
    let extra = len % threads;
    let mut bounds = Vec::with_capacity(threads);
    let mut at = 0;
    for t in 0..threads {
        let size = base + usize::from(t < extra);
        if size == 0 {
            break;
        }
        bounds.push((at, at + size));
        at += size;
    }
    bounds
}

/// Embed every video of the collection in every space. With `threads > 1`
/// the ids are processed in contiguous chunks on worker threads; the
/// result is identical to the sequential one because eval-mode encoding
/// is row-independent.
pub fn build_index(
    model: &FusionModel,
    store: &FeatureStore,
    video_ids: &[String],
    threads: usize,
) -> Result<EmbeddingIndex> {
    if video_ids.is_empty() {
        return Err(Error::Degenerate("cannot index an empty collection".into()));
    }
    let h = model.config.h;
    let d = model.config.space_dim();
    let mut spaces: Vec<Matrix> = (0..h).map(|_| Matrix::zeros(video_ids.len(), d)).collect();

    let bounds = chunk_bounds(video_ids.len(), threads);
    let chunk_results: Vec<Result<Vec<Matrix>>> = if bounds.len() <= 1 {
        let inputs = assemble_video_inputs(store, &model.config, video_ids)?;
        vec![model.encode_videos(&inputs).map(|(e, _)| e)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .map(|&(lo, hi)| {
                    scope.spawn(move || {
                        let inputs = assemble_video_inputs(store, &model.config, &video_ids[lo..hi])?;
                        model.encode_videos(&inputs).map(|(e, _)| e)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };

    for (&(lo, _), result) in bounds.iter().zip(chunk_results) {
        let embeddings = result?;
        for (space, emb) in spaces.iter_mut().zip(&embeddings) {
            for r in 0..emb.rows() {
                space.row_mut(lo + r).copy_from_slice(emb.row(r));
            }
        }
    }
    Ok(EmbeddingIndex {
        ids: video_ids.to_vec(),
        spaces,
    })
}

/// Order all indexed videos for one query by mean per-space cosine,
/// descending, ties broken by ascending video id.
pub fn rank(query_spaces: &[Vec<f64>], index: &EmbeddingIndex) -> Result<Vec<(String, f64)>> {
    if index.is_empty() {
        return Err(Error::Degenerate("rank: empty index".into()));
    }
    if query_spaces.len() != index.spaces.len() {
        return Err(Error::dim(
            "rank",
            format!(
                "query has {} spaces, index has {}",
                query_spaces.len(),
                index.spaces.len()
            ),
        ));
    }
    let scores = mean_cosine_scores(query_spaces, index)?;
    let mut order: Vec<usize> = (0..index.len()).collect();
    sort_by_score_then_id(&mut order, &scores, &index.ids);
    Ok(order
        .into_iter()
        .map(|v| (index.ids[v].clone(), scores[v]))
        .collect())
}

fn mean_cosine_scores(query_spaces: &[Vec<f64>], index: &EmbeddingIndex) -> Result<Vec<f64>> {
    let h = index.spaces.len();
    let inv_h = 1.0 / h as f64;
    let mut scores = vec![0.0; index.len()];
    for (q, space) in query_spaces.iter().zip(&index.spaces) {
        if q.len() != space.cols() {
            return Err(Error::dim(
                "rank",
                format!("query dim {} vs index dim {}", q.len(), space.cols()),
            ));
        }
        for (v, score) in scores.iter_mut().enumerate() {
            let row = space.row(v);
            let mut dot = 0.0;
            for (&a, &b) in q.iter().zip(row) {
                dot += a * b;
            }
            *score += dot;
        }
    }
    for s in &mut scores {
        *s *= inv_h;
    }
    Ok(scores)
}

fn sort_by_score_then_id(order: &mut [usize], scores: &[f64], ids: &[String]) {
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then_with(|| ids[a].cmp(&ids[b]))
    });
}

/// Full ranking of every query against an index.
pub struct Rankings {
    /// The indexed video ids (shared by all queries).
    pub ids: Vec<String>,
    pub queries: Vec<RankedQuery>,
}

/// One query's ranking: video indices into `Rankings::ids`, best first.
pub struct RankedQuery {
    pub query_id: String,
    pub order: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Rank every query (given as per-space embedding matrices with one row
/// per query) against the index.
pub fn rank_all(
    query_ids: &[String],
    query_spaces: &[Matrix],
    index: &EmbeddingIndex,
    threads: usize,
) -> Result<Rankings> {
    if query_spaces.len() != index.spaces.len() {
        return Err(Error::dim(
            "rank_all",
            format!(
                "{} query spaces vs {} index spaces",
                query_spaces.len(),
                index.spaces.len()
            ),
        ));
    }
    let n = query_ids.len();
    let rank_one = |q: usize| -> RankedQuery {
        let spaces: Vec<Vec<f64>> = query_spaces.iter().map(|m| m.row(q).to_vec()).collect();
        let scores = mean_cosine_scores(&spaces, index).expect("dims already checked");
        let mut order: Vec<usize> = (0..index.len()).collect();
        sort_by_score_then_id(&mut order, &scores, &index.ids);
        RankedQuery {
            query_id: query_ids[q].clone(),
            scores: order.iter().map(|&v| scores[v]).collect(),
            order: order.into_iter().map(|v| v as u32).collect(),
        }
    };

    let bounds = chunk_bounds(n, threads);
    let queries: Vec<RankedQuery> = if bounds.len() <= 1 {
        (0..n).map(rank_one).collect()
    } else {
        let chunked: Vec<Vec<RankedQuery>> = std::thread::scope(|scope| {
            bounds
                .iter()
                .map(|&(lo, hi)| scope.spawn(move || (lo..hi).map(rank_one).collect()))
                .collect::<Vec<_>>()
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        chunked.into_iter().flatten().collect()
    };
    Ok(Rankings {
        ids: index.ids.clone(),
        queries,
    })
}

/// query id → the set of relevant video ids.
pub type Relevance = BTreeMap<String, BTreeSet<String>>;

/// Single-positive relevance of a caption split: each caption's sole
/// relevant video is the one it describes.
pub fn caption_relevance(manifest: &DatasetManifest, split: Split) -> Relevance {
    manifest
        .split_captions(split)
        .iter()
        .map(|c| {
            let mut set = BTreeSet::new();
            set.insert(c.video_id.clone());
            (c.caption_id.clone(), set)
        })
        .collect()
}

/// Ascending 1-based ranks of the relevant items in one query's ranking.
fn relevant_ranks(ranking: &RankedQuery, ids: &[String], relevant: &BTreeSet<String>) -> Vec<usize> {
    let mut ranks = Vec::with_capacity(relevant.len());
    for (pos, &v) in ranking.order.iter().enumerate() {
        if relevant.contains(&ids[v as usize]) {
            ranks.push(pos + 1);
        }
    }
    ranks
}

fn per_query_relevant_ranks(rankings: &Rankings, relevance: &Relevance) -> Result<Vec<Vec<usize>>> {
    rankings
        .queries
        .iter()
        .map(|q| {
            let relevant = relevance.get(&q.query_id).ok_or_else(|| {
                Error::Config(format!("no relevance entry for query {:?}", q.query_id))
            })?;
            let ranks = relevant_ranks(q, &rankings.ids, relevant);
            if ranks.is_empty() {
                return Err(Error::Config(format!(
                    "query {:?} has no relevant item in the collection",
                    q.query_id
                )));
            }
            Ok(ranks)
        })
        .collect()
}

/// Fraction of queries with at least one relevant video in the top `k`.
pub fn recall_at_k(rankings: &Rankings, relevance: &Relevance, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let ranks = per_query_relevant_ranks(rankings, relevance)?;
    let hits = ranks.iter().filter(|r| r[0] <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Median over queries of the best relevant rank; an even query count
/// takes the lower median so the result stays an attained rank.
pub fn median_rank(rankings: &Rankings, relevance: &Relevance) -> Result<usize> {
    let ranks = per_query_relevant_ranks(rankings, relevance)?;
    let mut best: Vec<usize> = ranks.iter().map(|r| r[0]).collect();
    best.sort_unstable();
    Ok(best[(best.len() - 1) / 2])
}

/// Mean over queries of average precision: per query, the mean over its
/// relevant items of (relevant seen so far / rank).
pub fn mean_ap(rankings: &Rankings, relevance: &Relevance) -> Result<f64> {
    let ranks = per_query_relevant_ranks(rankings, relevance)?;
    let mut total = 0.0;
    for query_ranks in &ranks {
        let mut ap = 0.0;
        for (seen, &rank) in query_ranks.iter().enumerate() {
            ap += (seen + 1) as f64 / rank as f64;
        }
        total += ap / query_ranks.len() as f64;
    }
    Ok(total / ranks.len() as f64)
}

fn jaccard_of_sets(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Mean Jaccard overlap of the per-space top-`k` retrieval sets, over all
/// queries, for every space pair. Needs at least two spaces.
pub fn jaccard_interspace(
    query_spaces: &[Matrix],
    index: &EmbeddingIndex,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    let h = index.spaces.len();
    if h < 2 {
        return Err(Error::Unsupported(
            "inter-space overlap needs at least two spaces".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let n_queries = query_spaces
        .first()
        .map(|m| m.rows())
        .ok_or_else(|| Error::Degenerate("no query embeddings".into()))?;
    if n_queries == 0 {
        return Err(Error::Degenerate("no queries".into()));
    }
    let k = k.min(index.len());

    let mut sums = vec![vec![0.0; h]; h];
    for q in 0..n_queries {
        // Top-k set of each space under that space's own cosine.
        let topk: Vec<BTreeSet<u32>> = (0..h)
            .map(|i| {
                let query = query_spaces[i].row(q);
                let space = &index.spaces[i];
                let scores: Vec<f64> = (0..index.len())
                    .map(|v| {
                        let mut dot = 0.0;
                        for (&a, &b) in query.iter().zip(space.row(v)) {
                            dot += a * b;
                        }
                        dot
                    })
                    .collect();
                let mut order: Vec<usize> = (0..index.len()).collect();
                sort_by_score_then_id(&mut order, &scores, &index.ids);
                order[..k].iter().map(|&v| v as u32).collect()
            })
            .collect();
        for i in 0..h {
            for j in 0..h {
                sums[i][j] += jaccard_of_sets(&topk[i], &topk[j]);
            }
        }
    }
    for row in &mut sums {
        for v in row.iter_mut() {
            *v /= n_queries as f64;
        }
    }
    Ok(sums)
}

/// What to include in an evaluation run beyond the core metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub ranked_lists: bool,
    #[serde(default)]
    pub jaccard: bool,
    #[serde(default = "default_jaccard_k")]
    pub jaccard_k: usize,
    #[serde(default)]
    pub attention_weights: bool,
}

fn default_split() -> Split {
    Split::Test
}

fn default_jaccard_k() -> usize {
    5
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Split::Test,
            ranked_lists: false,
            jaccard: false,
            jaccard_k: 5,
            attention_weights: false,
        }
    }
}

/// One query's ranked list in report form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedListRecord {
    pub query_id: String,
    pub ranking: Vec<String>,
    pub scores: Vec<f64>,
}

/// Retrieval quality of one model on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub queries: usize,
    pub videos: usize,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub med_r: usize,
    pub map: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_attention: Option<AverageAttentionWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranked_lists: Option<Vec<RankedListRecord>>,
}

impl EvalReport {
    /// Sum of the three recalls; an alternative model-selection signal.
    pub fn sum_recalls(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

/// Evaluate text-to-video retrieval of `model` on one split: embed the
/// split's videos and captions, rank, and compute the metrics.
pub fn evaluate(
    model: &FusionModel,
    store: &FeatureStore,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
    threads: usize,
) -> Result<EvalReport> {
    let video_ids = manifest.split_videos(opts.split).to_vec();
    let captions = manifest.split_captions(opts.split);
    if video_ids.is_empty() || captions.is_empty() {
        return Err(Error::Degenerate(format!(
            "split {:?} has no videos or captions",
            opts.split
        )));
    }
    let caption_ids: Vec<String> = captions.iter().map(|c| c.caption_id.clone()).collect();

    let index = build_index(model, store, &video_ids, threads)?;
    let text_inputs = assemble_text_inputs(store, &model.config, &caption_ids)?;
    let (query_spaces, _) = model.encode_texts(&text_inputs)?;
    let rankings = rank_all(&caption_ids, &query_spaces, &index, threads)?;
    let relevance = caption_relevance(manifest, opts.split);

    let report = EvalReport {
        split: opts.split,
        queries: caption_ids.len(),
        videos: video_ids.len(),
        r1: recall_at_k(&rankings, &relevance, 1)?,
        r5: recall_at_k(&rankings, &relevance, 5)?,
        r10: recall_at_k(&rankings, &relevance, 10)?,
        med_r: median_rank(&rankings, &relevance)?,
        map: mean_ap(&rankings, &relevance)?,
        jaccard: if opts.jaccard {
            Some(jaccard_interspace(&query_spaces, &index, opts.jaccard_k)?)
        } else {
            None
        },
        avg_attention: if opts.attention_weights {
            Some(average_attention_weights(model, store, manifest, opts.split)?)
        } else {
            None
        },
        ranked_lists: if opts.ranked_lists {
            Some(
                rankings
                    .queries
                    .iter()
                    .map(|q| RankedListRecord {
                        query_id: q.query_id.clone(),
                        ranking: q
                            .order
                            .iter()
                            .map(|&v| rankings.ids[v as usize].clone())
                            .collect(),
                        scores: q.scores.clone(),
                    })
                    .collect(),
            )
        } else {
            None
        },
    };
    debug_assert!(report.r1 <= report.r5 && report.r5 <= report.r10);
    Ok(report)
}

/// Write rankings as TSV: `query_id  rank  video_id  score`.
pub fn write_ranked_tsv<W: Write>(w: &mut W, rankings: &Rankings) -> Result<()> {
    for q in &rankings.queries {
        for (pos, (&v, score)) in q.order.iter().zip(&q.scores).enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}",
                q.query_id,
                pos + 1,
                rankings.ids[v as usize],
                score
            )?;
        }
    }
    Ok(())
}
