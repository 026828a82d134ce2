//! Hamming-ranking evaluation harness.
//!
//! Encodes database and query items with the discriminator's hash
//! functions, ranks the database per query by Hamming distance (ties broken
//! by ascending id so full pipelines stay deterministic), and reports MAP,
//! an interpolated PR curve on a fixed recall grid, and precision at top-K.
//!
//! Per-query work is embarrassingly parallel over a read-only code table;
//! the rayon-backed loops collect in index order, so results are identical
//! for any worker count.

use crate::data::{Dataset, ItemId, LabelSet};
use crate::model::{binarize, Direction, HashCode, Modality, TwoPathwayNet};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Recall levels of the PR curve: 0.0, 0.05, …, 1.0.
pub const RECALL_GRID: usize = 21;

/// Default top-K grid: 1, then multiples of 50 up to 500.
pub fn default_k_grid() -> Vec<usize> {
    std::iter::once(1)
        .chain((1..=10).map(|i| i * 50))
        .collect()
}

/// True iff the label sets intersect. Covers single- and multi-label
/// datasets uniformly.
pub fn relevance(query_labels: &LabelSet, item_labels: &LabelSet) -> bool {
    !query_labels.is_disjoint(item_labels)
}

/// The full ranking of the database for one query.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub query_id: ItemId,
    /// Database ids ordered by ascending Hamming distance, ties by
    /// ascending id. A permutation of the database.
    pub ranked_ids: Vec<ItemId>,
    /// Distances aligned with `ranked_ids`; non-decreasing.
    pub distances: Vec<u32>,
    /// Relevance flag per rank position.
    pub relevance: Vec<bool>,
}

impl RankedList {
    pub fn total_relevant(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }
}

/// Encodes every database item (labeled + unlabeled, in database order)
/// with the given pathway.
pub fn encode_database(
    net: &TwoPathwayNet,
    dataset: &Dataset,
    modality: Modality,
) -> Result<Vec<(ItemId, HashCode)>> {
    let entries: Vec<(ItemId, &[f64])> = dataset
        .eval_view()
        .database()
        .map(|e| {
            (
                e.id,
                match modality {
                    Modality::Image => e.image,
                    Modality::Text => e.text,
                },
            )
        })
        .collect();
    encode_features(net, modality, &entries)
}

/// Encodes the query split with the given pathway.
pub fn encode_queries(
    net: &TwoPathwayNet,
    dataset: &Dataset,
    modality: Modality,
) -> Result<Vec<(ItemId, HashCode)>> {
    let entries: Vec<(ItemId, &[f64])> = dataset
        .queries()
        .iter()
        .map(|q| (q.id, q.feature(modality)))
        .collect();
    encode_features(net, modality, &entries)
}

/// `binarize ∘ forward` over a list of feature vectors. Deterministic and
/// idempotent: the same inputs always produce the same codes.
pub fn encode_features(
    net: &TwoPathwayNet,
    modality: Modality,
    entries: &[(ItemId, &[f64])],
) -> Result<Vec<(ItemId, HashCode)>> {
    entries
        .par_iter()
        .map(|&(id, feat)| {
            let trace = net.forward(modality, feat)?;
            Ok((id, binarize(trace.hash())))
        })
        .collect()
}

/// Ranks the database for one query code: ascending Hamming distance, ties
/// by ascending id.
pub fn rank_by_hamming(
    query_code: &HashCode,
    db_codes: &[(ItemId, HashCode)],
) -> Result<Vec<(ItemId, u32)>> {
    let mut ranked: Vec<(ItemId, u32)> = db_codes
        .iter()
        .map(|(id, code)| Ok((*id, query_code.hamming(code)?)))
        .collect::<Result<_>>()?;
    ranked.sort_by_key(|&(id, d)| (d, id));
    Ok(ranked)
}

/// Average precision of a ranked relevance list:
/// `AP = (1/R) Σ_k (R_k / k) · rel_k`, where `R_k` counts relevant items in
/// the top `k`. Returns 0 when the query has no relevant items.
pub fn average_precision(flags: &[bool], total_relevant: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

/// Arithmetic mean of per-query average precision.
pub fn mean_average_precision(lists: &[RankedList]) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("mean_average_precision"));
    }
    let sum: f64 = lists
        .iter()
        .map(|l| average_precision(&l.relevance, l.total_relevant()))
        .sum();
    Ok(sum / lists.len() as f64)
}

/// One point of the precision–recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Interpolated PR curve on the fixed recall grid {0.0, 0.05, …, 1.0}:
/// per query, precision at recall level `r` is the maximum precision
/// achieved at any recall ≥ `r`; points are then averaged over queries.
/// Queries without any relevant item define no recall level and are
/// skipped.
pub fn pr_curve(lists: &[RankedList]) -> Result<Vec<PrPoint>> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("pr_curve"));
    }
    let grid: Vec<f64> = (0..RECALL_GRID).map(|i| i as f64 * 0.05).collect();
    let mut sums = vec![0.0; grid.len()];
    let mut used = 0usize;
    for list in lists {
        let total = list.total_relevant();
        if total == 0 {
            continue;
        }
        used += 1;
        // precision/recall at each relevant rank
        let mut points = Vec::with_capacity(total);
        let mut hits = 0usize;
        for (k, &rel) in list.relevance.iter().enumerate() {
            if rel {
                hits += 1;
                points.push((hits as f64 / total as f64, hits as f64 / (k + 1) as f64));
            }
        }
        // suffix max precision → interpolated envelope
        let mut envelope = points.clone();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
        }
        for (gi, &r) in grid.iter().enumerate() {
            // first point with recall >= r (exists: final recall is 1.0)
            let idx = envelope.partition_point(|&(rec, _)| rec < r - 1e-12);
            let p = if idx < envelope.len() {
                envelope[idx].1
            } else {
                envelope.last().unwrap().1
            };
            sums[gi] += p;
        }
    }
    if used == 0 {
        return Err(Error::EmptyInput("pr_curve: no query has relevant items"));
    }
    Ok(grid
        .iter()
        .zip(&sums)
        .map(|(&recall, &s)| PrPoint {
            recall,
            precision: s / used as f64,
        })
        .collect())
}

/// One point of the top-K precision curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKPoint {
    pub k: usize,
    pub precision: f64,
}

/// Mean over queries of (#relevant in top K) / K, for each K in the grid.
/// K must satisfy `1 <= K <= database size`.
pub fn topk_precision(lists: &[RankedList], k_grid: &[usize]) -> Result<Vec<TopKPoint>> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("topk_precision"));
    }
    let db_size = lists[0].ranked_ids.len();
    k_grid
        .iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::Config("top-K precision requires K >= 1".into()));
            }
            if k > db_size {
                return Err(Error::Config(format!(
                    "top-K precision: K={k} exceeds database size {db_size}"
                )));
            }
            let sum: f64 = lists
                .iter()
                .map(|l| l.relevance[..k].iter().filter(|&&r| r).count() as f64 / k as f64)
                .sum();
            Ok(TopKPoint {
                k,
                precision: sum / lists.len() as f64,
            })
        })
        .collect()
}

/// Metrics of one retrieval direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: Direction,
    pub map: f64,
    pub pr_curve: Vec<PrPoint>,
    pub topk_precision: Vec<TopKPoint>,
}

/// Full evaluation report; serializes to deterministic JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub code_len: usize,
    pub database_size: usize,
    pub num_queries: usize,
    pub k_grid: Vec<usize>,
    pub directions: Vec<DirectionReport>,
}

impl MetricsReport {
    pub fn direction(&self, d: Direction) -> Option<&DirectionReport> {
        self.directions.iter().find(|r| r.direction == d)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// CSV form of a PR curve, columns `x,precision` where x is recall.
pub fn pr_curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("x,precision\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.recall, p.precision));
    }
    out
}

/// CSV form of a top-K curve, columns `x,precision` where x is K.
pub fn topk_csv(points: &[TopKPoint]) -> String {
    let mut out = String::from("x,precision\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.k, p.precision));
    }
    out
}

/// Builds the per-query ranked lists for one direction.
pub fn ranked_lists(
    net: &TwoPathwayNet,
    dataset: &Dataset,
    direction: Direction,
) -> Result<Vec<RankedList>> {
    let view = dataset.eval_view();
    let db_codes = encode_database(net, dataset, direction.target_modality())?;
    let labels_by_id: std::collections::HashMap<ItemId, &LabelSet> = view
        .database()
        .filter_map(|e| e.labels.map(|ls| (e.id, ls)))
        .collect();
    let query_codes = encode_queries(net, dataset, direction.query_modality())?;

    query_codes
        .par_iter()
        .map(|(qid, qcode)| {
            let ranked = rank_by_hamming(qcode, &db_codes)?;
            let q_labels = view.labels_of(*qid).ok_or_else(|| {
                Error::Data(format!("query {qid} has no evaluation labels"))
            })?;
            let flags: Vec<bool> = ranked
                .iter()
                .map(|&(id, _)| {
                    labels_by_id
                        .get(&id)
                        .is_some_and(|ls| relevance(q_labels, ls))
                })
                .collect();
            let (ranked_ids, distances): (Vec<ItemId>, Vec<u32>) = ranked.into_iter().unzip();
            Ok(RankedList {
                query_id: *qid,
                ranked_ids,
                distances,
                relevance: flags,
            })
        })
        .collect()
}

/// Evaluates one direction end to end.
pub fn evaluate_direction(
    net: &TwoPathwayNet,
    dataset: &Dataset,
    direction: Direction,
    k_grid: &[usize],
) -> Result<DirectionReport> {
    let lists = ranked_lists(net, dataset, direction)?;
    Ok(DirectionReport {
        direction,
        map: mean_average_precision(&lists)?,
        pr_curve: pr_curve(&lists)?,
        topk_precision: topk_precision(&lists, k_grid)?,
    })
}

/// Evaluates the requested directions and assembles the report.
pub fn evaluate(
    net: &TwoPathwayNet,
    dataset: &Dataset,
    directions: &[Direction],
    k_grid: &[usize],
) -> Result<MetricsReport> {
    if dataset.queries().is_empty() {
        return Err(Error::Data("dataset has no query split to evaluate".into()));
    }
    let reports: Vec<DirectionReport> = directions
        .iter()
        .map(|&d| evaluate_direction(net, dataset, d, k_grid))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        dataset: dataset.name().to_string(),
        code_len: net.config.code_len,
        database_size: dataset.database_size(),
        num_queries: dataset.queries().len(),
        k_grid: k_grid.to_vec(),
        directions: reports,
    })
}

/// MAP of a direction only; used for validation during training.
pub fn quick_map(net: &TwoPathwayNet, dataset: &Dataset, direction: Direction) -> Result<f64> {
    let lists = ranked_lists(net, dataset, direction)?;
    mean_average_precision(&lists)
}
