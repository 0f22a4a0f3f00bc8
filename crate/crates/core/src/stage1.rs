//! Approximate candidate generation.
//!
//! One child-level search per (query token, modality) feeds a table of
//! per-parent, per-token maximum similarities. Each parent's strongest `M`
//! token maxima are summed within a modality, the per-modality sums are
//! standardized with median/MAD, combined with fixed weights, and the top
//! `N` parents go on to exact re-ranking.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{FilterSpec, Index};
use crate::model::{
    check_weight_sum, score_desc, sort_ranking, Modality, QueryEmbedding, RetrievalConfig,
    ScoredParent, Stage,
};
use crate::pool::bounded_map;
use crate::scalar::Scalar;

/// MAD values below this are replaced by 1.
pub const MAD_EPSILON: f64 = 1e-9;

/// Sparse running maxima keyed by (modality, parent, token).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage1Table<S> {
    entries: BTreeMap<(Modality, String, usize), S>,
    searches: usize,
}

impl<S: Scalar> Stage1Table<S> {
    pub fn new() -> Self {
        Stage1Table {
            entries: BTreeMap::new(),
            searches: 0,
        }
    }

    /// Folds one hit in under max semantics.
    pub fn observe(&mut self, modality: Modality, parent_id: &str, token: usize, similarity: S) {
        match self.entries.get_mut(&(modality, parent_id.to_string(), token)) {
            Some(current) => {
                if similarity > *current {
                    *current = similarity;
                }
            }
            None => {
                self.entries
                    .insert((modality, parent_id.to_string(), token), similarity);
            }
        }
    }

    pub fn get(&self, parent_id: &str, token: usize, modality: Modality) -> Option<S> {
        self.entries
            .get(&(modality, parent_id.to_string(), token))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Child-level searches issued while building this table.
    pub fn searches(&self) -> usize {
        self.searches
    }

    /// `(modality, parent_id, token, max similarity)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (Modality, &str, usize, S)> {
        self.entries
            .iter()
            .map(|((m, p, t), &s)| (*m, p.as_str(), *t, s))
    }

    /// Max-merges `other` into `self`.
    pub fn merge(&mut self, other: &Stage1Table<S>) {
        for (m, p, t, s) in other.iter() {
            self.observe(m, p, t, s);
        }
        self.searches += other.searches;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "S: Scalar")]
pub struct ModalityScore<S> {
    pub parent_id: String,
    pub modality: Modality,
    pub approx_score: S,
    pub contributing_token_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "S: Scalar")]
pub struct FusedScore<S> {
    pub parent_id: String,
    /// Empty when fusion was bypassed for a single-modality corpus.
    pub z_by_modality: BTreeMap<Modality, S>,
    pub fused: S,
}

/// Corpus modalities that `base_filter` leaves searchable, ascending.
pub fn active_modalities<S: Scalar>(index: &Index<S>, base_filter: &FilterSpec) -> Vec<Modality> {
    index
        .corpus()
        .modality_set()
        .into_iter()
        .filter(|&m| base_filter.modality.is_none_or(|f| f == m))
        .collect()
}

/// Issues `|Q| × |active modalities|` searches with at most
/// `config.fanout_concurrency` in flight and folds every hit into a table.
pub fn fanout_search<S: Scalar>(
    index: &Index<S>,
    query: &QueryEmbedding<S>,
    config: &RetrievalConfig,
    base_filter: &FilterSpec,
) -> Result<Stage1Table<S>> {
    config.validate()?;
    let mut table = Stage1Table::new();
    if index.is_empty() {
        return Ok(table);
    }
    for token in query.tokens() {
        index.check_query(token, config.k_per_token)?;
    }

    let modalities = active_modalities(index, base_filter);
    let filters: BTreeMap<Modality, _> = modalities
        .iter()
        .map(|&m| (m, index.resolve_filter(&base_filter.clone().with_modality(m))))
        .collect();
    let jobs: Vec<(usize, Modality)> = (0..query.len())
        .flat_map(|t| modalities.iter().map(move |&m| (t, m)))
        .collect();

    let results = bounded_map(config.fanout_concurrency, &jobs, |&(t, m)| {
        index.knn_resolved(
            query.tokens()[t].as_slice(),
            config.k_per_token,
            &filters[&m],
            config.num_candidates,
        )
    });

    let parents = index.corpus().parents();
    for (&(token, modality), hits) in jobs.iter().zip(&results) {
        for hit in hits {
            let parent = &parents[index.parent_of(hit.child) as usize].parent_id;
            table.observe(modality, parent, token, hit.similarity);
        }
    }
    table.searches = jobs.len();
    log::debug!(
        "fan-out for {}: {} searches, {} table entries",
        query.query_id,
        table.searches,
        table.len()
    );
    Ok(table)
}

/// Per (parent, modality): the sum of the `top_m` largest token maxima.
/// The selected values are summed in ascending token order, so with
/// `top_m ≥ |S(d)|` the result equals a token-ordered full sum bit-for-bit.
pub fn topm_aggregate<S: Scalar>(table: &Stage1Table<S>, top_m: usize) -> Vec<ModalityScore<S>> {
    assert!(top_m >= 1, "top_m must be at least 1");
    let mut out = Vec::new();
    let mut group: Vec<(usize, S)> = Vec::new();
    let mut iter = table.iter().peekable();
    while let Some((modality, parent, token, sim)) = iter.next() {
        group.clear();
        group.push((token, sim));
        while let Some(&(m, p, t, s)) = iter.peek() {
            if m != modality || p != parent {
                break;
            }
            group.push((t, s));
            iter.next();
        }
        if group.len() > top_m {
            group.sort_by(|a, b| score_desc(a.1, b.1).then(a.0.cmp(&b.0)));
            group.truncate(top_m);
            group.sort_by_key(|&(t, _)| t);
        }
        out.push(ModalityScore {
            parent_id: parent.to_string(),
            modality,
            approx_score: group.iter().fold(S::zero(), |acc, &(_, s)| acc + s),
            contributing_token_count: group.len(),
        });
    }
    out
}

fn median<S: Scalar>(sorted: &[S]) -> S {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / S::lit(2.0)
    }
}

fn sort_values<S: Scalar>(values: &mut [S]) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

/// Median and (unscaled) median absolute deviation.
pub fn median_mad<S: Scalar>(values: &[S]) -> Result<(S, S)> {
    if values.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut sorted = values.to_vec();
    sort_values(&mut sorted);
    let med = median(&sorted);
    let mut dev: Vec<S> = values.iter().map(|&v| (v - med).abs()).collect();
    sort_values(&mut dev);
    Ok((med, median(&dev)))
}

/// `(v - median) / MAD`, with MAD below [`MAD_EPSILON`] replaced by 1.
pub fn robust_z<S: Scalar>(values: &[S]) -> Result<Vec<S>> {
    let (med, mad) = median_mad(values)?;
    let scale = if mad < S::lit(MAD_EPSILON) { S::one() } else { mad };
    Ok(values.iter().map(|&v| (v - med) / scale).collect())
}

/// Robust z-score of each parent's score within one modality.
pub fn mad_normalize<S: Scalar>(scores: &[ModalityScore<S>]) -> Result<BTreeMap<String, S>> {
    let values: Vec<S> = scores.iter().map(|s| s.approx_score).collect();
    let z = robust_z(&values)?;
    Ok(scores
        .iter()
        .zip(z)
        .map(|(s, z)| (s.parent_id.clone(), z))
        .collect())
}

/// Weighted sum of per-modality z-scores. A parent missing from a modality
/// contributes z = 0 there. Output is ascending by parent id.
pub fn fuse<S: Scalar>(
    z_by_modality: &BTreeMap<Modality, BTreeMap<String, S>>,
    weights: &BTreeMap<Modality, f64>,
) -> Result<Vec<FusedScore<S>>> {
    for &m in z_by_modality.keys() {
        if !weights.contains_key(&m) {
            return Err(Error::MissingWeight(m));
        }
    }
    check_weight_sum(weights)?;

    let mut fused: BTreeMap<&str, FusedScore<S>> = BTreeMap::new();
    for z in z_by_modality.values() {
        for parent in z.keys() {
            fused.entry(parent).or_insert_with(|| FusedScore {
                parent_id: parent.clone(),
                z_by_modality: BTreeMap::new(),
                fused: S::zero(),
            });
        }
    }
    for entry in fused.values_mut() {
        let mut total = S::zero();
        for (&m, &w) in weights {
            let z = z_by_modality
                .get(&m)
                .and_then(|z| z.get(&entry.parent_id))
                .copied();
            if let Some(z) = z {
                entry.z_by_modality.insert(m, z);
                total = total + S::lit(w) * z;
            }
        }
        entry.fused = total;
    }
    Ok(fused.into_values().collect())
}

/// Single-modality path: rank directly by the Top-M score.
pub fn bypass_fusion<S: Scalar>(scores: &[ModalityScore<S>]) -> Vec<FusedScore<S>> {
    let mut out: Vec<FusedScore<S>> = scores
        .iter()
        .map(|s| FusedScore {
            parent_id: s.parent_id.clone(),
            z_by_modality: BTreeMap::new(),
            fused: s.approx_score,
        })
        .collect();
    out.sort_by(|a, b| a.parent_id.cmp(&b.parent_id));
    out
}

/// Top `shortlist_n` parents by fused score, ties by parent id.
pub fn select_candidates<S: Scalar>(fused: &[FusedScore<S>], shortlist_n: usize) -> Vec<ScoredParent<S>> {
    let mut ranked: Vec<ScoredParent<S>> = fused
        .iter()
        .map(|f| ScoredParent {
            parent_id: f.parent_id.clone(),
            score: f.fused,
            stage: Stage::Stage1,
        })
        .collect();
    sort_ranking(&mut ranked);
    ranked.truncate(shortlist_n);
    ranked
}

/// Intermediate products of one Stage-1 run.
#[derive(Clone, Debug)]
pub struct Stage1Trace<S> {
    pub table: Stage1Table<S>,
    pub modality_scores: Vec<ModalityScore<S>>,
    pub fused: Vec<FusedScore<S>>,
    pub shortlist: Vec<ScoredParent<S>>,
}

pub fn stage1_trace<S: Scalar>(
    index: &Index<S>,
    query: &QueryEmbedding<S>,
    config: &RetrievalConfig,
    base_filter: &FilterSpec,
) -> Result<Stage1Trace<S>> {
    let table = fanout_search(index, query, config, base_filter)?;
    let modality_scores = topm_aggregate(&table, config.top_m);
    let active = active_modalities(index, base_filter);

    let fused = if active.len() <= 1 {
        bypass_fusion(&modality_scores)
    } else {
        let weights = config.resolve_weights(&active)?;
        let mut z_by_modality = BTreeMap::new();
        for &m in &active {
            let scores: Vec<ModalityScore<S>> = modality_scores
                .iter()
                .filter(|s| s.modality == m)
                .cloned()
                .collect();
            if !scores.is_empty() {
                z_by_modality.insert(m, mad_normalize(&scores)?);
            }
        }
        fuse(&z_by_modality, &weights)?
    };

    let shortlist = select_candidates(&fused, config.shortlist_n);
    Ok(Stage1Trace {
        table,
        modality_scores,
        fused,
        shortlist,
    })
}

/// Stage-1 shortlist for one query.
pub fn stage1_run<S: Scalar>(
    index: &Index<S>,
    query: &QueryEmbedding<S>,
    config: &RetrievalConfig,
    base_filter: &FilterSpec,
) -> Result<Vec<ScoredParent<S>>> {
    stage1_trace(index, query, config, base_filter).map(|t| t.shortlist)
}
