//! Child-level nearest-neighbor search.
//!
//! An [`Index`] owns its [`Corpus`] and answers top-k similarity queries over
//! child vectors, either by an exhaustive scan of per-modality packed
//! matrices or by traversing a hierarchical navigable small-world graph.
//! Filters are evaluated during the search, not afterwards.
//!
//! Metadata filters see a child's own metadata first and fall back to its
//! parent's metadata for keys the child does not set.

mod graph;
mod persist;

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Corpus;
use crate::model::{
    dot_slice, score_desc, AnnMode, GraphParams, Metadata, Modality, RetrievalConfig, Vector,
};
use crate::scalar::Scalar;

pub(crate) use graph::Graph;
pub use persist::{INDEX_FORMAT_VERSION, INDEX_MAGIC};

/// Norm deviation above which a query vector is rejected.
pub const QUERY_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ChildHit<S> {
    pub child_id: String,
    pub parent_id: String,
    pub modality: Modality,
    pub similarity: S,
}

/// Conjunction of an optional modality and exact-match metadata pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub modality: Option<Modality>,
    pub metadata_equals: BTreeMap<String, String>,
}

impl FilterSpec {
    /// Matches every child.
    pub fn any() -> Self {
        Self::default()
    }

    pub fn modality(m: Modality) -> Self {
        FilterSpec {
            modality: Some(m),
            ..Self::default()
        }
    }

    pub fn with_modality(mut self, m: Modality) -> Self {
        self.modality = Some(m);
        self
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata_equals.insert(key.into(), value.into());
        self
    }

    pub fn matches(&self, modality: Modality, child: &Metadata, parent: &Metadata) -> bool {
        if self.modality.is_some_and(|m| m != modality) {
            return false;
        }
        self.metadata_equals.iter().all(|(k, v)| {
            child.get(k).or_else(|| parent.get(k)).is_some_and(|x| x == v)
        })
    }
}

/// Parameters that shape an index build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    pub ann_mode: AnnMode,
    pub graph: GraphParams,
}

impl From<&RetrievalConfig> for IndexParams {
    fn from(c: &RetrievalConfig) -> Self {
        IndexParams {
            ann_mode: c.ann_mode,
            graph: c.graph,
        }
    }
}

/// Children of one parent as a row-major matrix, rows ascending by child id.
#[derive(Clone, Debug)]
pub struct ChildMatrix<'a, S: Scalar> {
    dim: usize,
    ids: Vec<&'a str>,
    data: Cow<'a, [S]>,
}

impl<'a, S: Scalar> ChildMatrix<'a, S> {
    pub fn new(dim: usize, ids: Vec<&'a str>, data: Cow<'a, [S]>) -> Self {
        assert_eq!(ids.len() * dim, data.len(), "child matrix shape");
        ChildMatrix { dim, ids, data }
    }

    /// Matrix over arbitrary rows; ids are left empty.
    pub fn from_rows(dim: usize, rows: &[Vector<S>]) -> ChildMatrix<'static, S> {
        let data: Vec<S> = rows.iter().flat_map(|r| r.as_slice().iter().copied()).collect();
        assert_eq!(rows.len() * dim, data.len(), "child matrix shape");
        ChildMatrix {
            dim,
            ids: vec![""; rows.len()],
            data: Cow::Owned(data),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[&'a str] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }
}

/// Packed vectors of one modality.
#[derive(Clone, Debug)]
struct FlatBlock<S> {
    rows: Vec<u32>,
    data: Vec<S>,
}

/// A filter bound to one index.
pub(crate) struct ResolvedFilter {
    modality: Option<Modality>,
    mask: Option<Vec<bool>>,
    matching: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RawHit<S> {
    pub child: u32,
    pub similarity: S,
}

/// Immutable searchable structure over a corpus.
#[derive(Debug)]
pub struct Index<S: Scalar> {
    corpus: Corpus<S>,
    params: IndexParams,
    vectors: Vec<S>,
    child_parent: Vec<u32>,
    child_modality: Vec<Modality>,
    /// position of each child when all children are ordered by id
    id_rank: Vec<u32>,
    flat: BTreeMap<Modality, FlatBlock<S>>,
    graph: Option<Graph>,
}

/// Builds an index over `corpus` in the mode selected by `config`.
pub fn build_index<S: Scalar>(corpus: Corpus<S>, config: &RetrievalConfig) -> Index<S> {
    Index::build(corpus, IndexParams::from(config))
}

impl<S: Scalar> Index<S> {
    pub fn build(corpus: Corpus<S>, params: IndexParams) -> Self {
        let mut index = Self::assemble(corpus, params, None);
        if params.ann_mode == AnnMode::ApproximateGraph {
            index.graph = Some(Graph::build(&index.vectors, index.dim(), params.graph));
        }
        index
    }

    fn assemble(corpus: Corpus<S>, params: IndexParams, graph: Option<Graph>) -> Self {
        let n = corpus.num_children();
        let dim = corpus.dimension();
        let mut vectors = Vec::with_capacity(n * dim);
        let mut child_parent = Vec::with_capacity(n);
        let mut child_modality = Vec::with_capacity(n);
        let mut flat: BTreeMap<Modality, FlatBlock<S>> = BTreeMap::new();
        for (i, c) in corpus.children().iter().enumerate() {
            vectors.extend_from_slice(c.vector.as_slice());
            child_parent.push(corpus.parent_of_child(i) as u32);
            child_modality.push(c.modality);
            let block = flat.entry(c.modality).or_insert_with(|| FlatBlock {
                rows: Vec::new(),
                data: Vec::new(),
            });
            block.rows.push(i as u32);
            block.data.extend_from_slice(c.vector.as_slice());
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| {
            corpus.children()[a as usize]
                .child_id
                .cmp(&corpus.children()[b as usize].child_id)
        });
        let mut id_rank = vec![0u32; n];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i as usize] = rank as u32;
        }
        Index {
            corpus,
            params,
            vectors,
            child_parent,
            child_modality,
            id_rank,
            flat,
            graph,
        }
    }

    pub fn corpus(&self) -> &Corpus<S> {
        &self.corpus
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    pub fn ann_mode(&self) -> AnnMode {
        self.params.ann_mode
    }

    pub fn dim(&self) -> usize {
        self.corpus.dimension()
    }

    /// Number of searchable child vectors.
    pub fn len(&self) -> usize {
        self.child_parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.child_parent.is_empty()
    }

    /// Top-`k` children under `filter`. In exact-flat mode this is the exact
    /// answer; in graph mode `num_candidates` is the width of the filtered
    /// result beam kept during traversal.
    pub fn knn(
        &self,
        query: &Vector<S>,
        k: usize,
        filter: &FilterSpec,
        num_candidates: usize,
    ) -> Result<Vec<ChildHit<S>>> {
        self.check_query(query, k)?;
        let resolved = self.resolve_filter(filter);
        let raw = self.knn_resolved(query.as_slice(), k, &resolved, num_candidates);
        Ok(self.to_hits(&raw))
    }

    /// Exhaustive top-`k` regardless of the index mode.
    pub fn exact_knn(&self, query: &Vector<S>, k: usize, filter: &FilterSpec) -> Result<Vec<ChildHit<S>>> {
        self.check_query(query, k)?;
        let resolved = self.resolve_filter(filter);
        let raw = self.scan(query.as_slice(), k, &resolved);
        Ok(self.to_hits(&raw))
    }

    /// All children of `parent_id`, optionally restricted to one modality.
    pub fn children_of(
        &self,
        parent_id: &str,
        modality: Option<Modality>,
    ) -> Result<ChildMatrix<'_, S>> {
        let pos = self
            .corpus
            .parent_position(parent_id)
            .ok_or_else(|| Error::UnknownParent(parent_id.to_string()))?;
        Ok(self.children_at(pos, modality))
    }

    pub(crate) fn children_at(&self, pos: usize, modality: Option<Modality>) -> ChildMatrix<'_, S> {
        let range = self.corpus.child_range(pos);
        let dim = self.dim();
        let children = &self.corpus.children()[range.clone()];
        match modality {
            None => ChildMatrix {
                dim,
                ids: children.iter().map(|c| c.child_id.as_str()).collect(),
                data: Cow::Borrowed(&self.vectors[range.start * dim..range.end * dim]),
            },
            Some(m) => {
                let mut ids = Vec::new();
                let mut data = Vec::new();
                for (offset, c) in children.iter().enumerate() {
                    if c.modality == m {
                        let i = range.start + offset;
                        ids.push(c.child_id.as_str());
                        data.extend_from_slice(&self.vectors[i * dim..(i + 1) * dim]);
                    }
                }
                ChildMatrix {
                    dim,
                    ids,
                    data: Cow::Owned(data),
                }
            }
        }
    }

    pub(crate) fn check_query(&self, query: &Vector<S>, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        if query.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: query.dim(),
                locator: "query vector".into(),
            });
        }
        if query.norm_deviation() > QUERY_NORM_TOLERANCE {
            return Err(Error::UnnormalizedQuery {
                norm: query.norm().to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    pub(crate) fn resolve_filter(&self, filter: &FilterSpec) -> ResolvedFilter {
        if filter.metadata_equals.is_empty() {
            let matching = match filter.modality {
                Some(m) => self.flat.get(&m).map_or(0, |b| b.rows.len()),
                None => self.len(),
            };
            return ResolvedFilter {
                modality: filter.modality,
                mask: None,
                matching,
            };
        }
        let parents = self.corpus.parents();
        let mask: Vec<bool> = self
            .corpus
            .children()
            .iter()
            .zip(&self.child_parent)
            .map(|(c, &p)| filter.matches(c.modality, &c.metadata, &parents[p as usize].metadata))
            .collect();
        let matching = mask.iter().filter(|&&m| m).count();
        ResolvedFilter {
            modality: filter.modality,
            mask: Some(mask),
            matching,
        }
    }

    #[inline]
    fn accepts(&self, filter: &ResolvedFilter, child: u32) -> bool {
        match &filter.mask {
            Some(mask) => mask[child as usize],
            None => filter
                .modality
                .is_none_or(|m| self.child_modality[child as usize] == m),
        }
    }

    pub(crate) fn knn_resolved(
        &self,
        query: &[S],
        k: usize,
        filter: &ResolvedFilter,
        num_candidates: usize,
    ) -> Vec<RawHit<S>> {
        if filter.matching == 0 {
            return Vec::new();
        }
        let beam = num_candidates.max(k);
        match &self.graph {
            // Small filtered populations are cheaper (and exact) to scan.
            Some(graph) if filter.matching > beam => {
                let found = graph.search(&self.vectors, self.dim(), query, beam, |c| {
                    self.accepts(filter, c)
                });
                let hits = found
                    .into_iter()
                    .map(|(similarity, child)| RawHit { child, similarity })
                    .collect();
                self.top_k(hits, k)
            }
            _ => self.scan(query, k, filter),
        }
    }

    fn scan(&self, query: &[S], k: usize, filter: &ResolvedFilter) -> Vec<RawHit<S>> {
        let dim = self.dim();
        let mut hits = Vec::new();
        for (&m, block) in &self.flat {
            if filter.modality.is_some_and(|f| f != m) {
                continue;
            }
            for (row, &child) in block.rows.iter().enumerate() {
                if let Some(mask) = &filter.mask {
                    if !mask[child as usize] {
                        continue;
                    }
                }
                let similarity = dot_slice(query, &block.data[row * dim..(row + 1) * dim]);
                hits.push(RawHit { child, similarity });
            }
        }
        self.top_k(hits, k)
    }

    fn hit_order(&self, a: &RawHit<S>, b: &RawHit<S>) -> Ordering {
        score_desc(a.similarity, b.similarity)
            .then_with(|| self.id_rank[a.child as usize].cmp(&self.id_rank[b.child as usize]))
    }

    fn top_k(&self, mut hits: Vec<RawHit<S>>, k: usize) -> Vec<RawHit<S>> {
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, |a, b| self.hit_order(a, b));
            hits.truncate(k);
        }
        hits.sort_by(|a, b| self.hit_order(a, b));
        hits
    }

    pub(crate) fn parent_of(&self, child: u32) -> u32 {
        self.child_parent[child as usize]
    }

    fn to_hits(&self, raw: &[RawHit<S>]) -> Vec<ChildHit<S>> {
        raw.iter()
            .map(|h| {
                let c = &self.corpus.children()[h.child as usize];
                ChildHit {
                    child_id: c.child_id.clone(),
                    parent_id: c.parent_id.clone(),
                    modality: c.modality,
                    similarity: h.similarity,
                }
            })
            .collect()
    }
}
