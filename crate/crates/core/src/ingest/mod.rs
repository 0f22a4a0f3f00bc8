//! Parent/child corpora, query sets and relevance judgments.
//!
//! On-disk formats are UTF-8 line-delimited JSON records; see [`format`] for
//! the record shapes and [`load_corpus`] / [`load_queries`] / [`load_qrels`]
//! for the loaders.

mod format;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{l2_normalize, ChildEmbedding, Modality, ParentDoc};
use crate::scalar::Scalar;

pub use format::{
    load_corpus, load_qrels, load_queries, write_corpus, write_qrels, write_queries, BlobRef,
    VectorLayout, VectorSource,
};
pub use report::{validate_corpus, ValidationReport};

/// Result of a loader together with the non-fatal issues it noticed.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Validated parent/child corpus.
///
/// Parents are kept sorted by id and children are grouped by parent in that
/// order, ascending by child id within a parent. Every vector is unit-norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Corpus<S> {
    dimension: usize,
    parents: Vec<ParentDoc>,
    children: Vec<ChildEmbedding<S>>,
    spans: Vec<(usize, usize)>,
}

impl<S: Scalar> Corpus<S> {
    /// Validates referential integrity and dimensions, then renormalizes
    /// every child vector. Record locators in errors are 1-based positions in
    /// `parents` / `children`.
    pub fn new(
        dimension: usize,
        mut parents: Vec<ParentDoc>,
        children: Vec<ChildEmbedding<S>>,
    ) -> Result<Self> {
        let mut seen_parents = HashSet::new();
        for (i, p) in parents.iter().enumerate() {
            if !seen_parents.insert(p.parent_id.as_str()) {
                return Err(Error::DuplicateParent {
                    parent_id: p.parent_id.clone(),
                    locator: format!("record {}", i + 1),
                });
            }
        }

        let mut seen_children = HashSet::new();
        for (i, c) in children.iter().enumerate() {
            if !seen_children.insert(c.child_id.as_str()) {
                return Err(Error::DuplicateChild {
                    child_id: c.child_id.clone(),
                    locator: format!("record {}", i + 1),
                });
            }
            if !seen_parents.contains(c.parent_id.as_str()) {
                return Err(Error::DanglingParent {
                    parent_id: c.parent_id.clone(),
                    child_id: c.child_id.clone(),
                    locator: format!("record {}", i + 1),
                });
            }
            if c.vector.dim() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: c.vector.dim(),
                    locator: format!("child {}", c.child_id),
                });
            }
        }
        drop(seen_children);
        drop(seen_parents);

        let mut children = children
            .into_iter()
            .map(|mut c| {
                c.vector = l2_normalize(&c.vector).map_err(|e| match e {
                    Error::ZeroVector(_) => Error::ZeroVector(format!("child {}", c.child_id)),
                    Error::NonFinite(_) => Error::NonFinite(format!("child {}", c.child_id)),
                    other => other,
                })?;
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;

        let input_order: HashMap<String, usize> = parents
            .iter()
            .enumerate()
            .map(|(i, p)| (p.parent_id.clone(), i + 1))
            .collect();
        parents.sort_by(|a, b| a.parent_id.cmp(&b.parent_id));
        children.sort_by(|a, b| {
            a.parent_id
                .cmp(&b.parent_id)
                .then_with(|| a.child_id.cmp(&b.child_id))
        });

        let mut spans = Vec::with_capacity(parents.len());
        let mut cursor = 0;
        for p in &mut parents {
            let start = cursor;
            let mut counts = BTreeMap::new();
            while cursor < children.len() && children[cursor].parent_id == p.parent_id {
                *counts.entry(children[cursor].modality).or_insert(0) += 1;
                cursor += 1;
            }
            if cursor == start {
                return Err(Error::EmptyParent {
                    parent_id: p.parent_id.clone(),
                    locator: format!("record {}", input_order[&p.parent_id]),
                });
            }
            p.child_count_by_modality = counts;
            spans.push((start, cursor));
        }

        Ok(Corpus {
            dimension,
            parents,
            children,
            spans,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn parents(&self) -> &[ParentDoc] {
        &self.parents
    }

    /// All children, grouped by parent in parent order.
    pub fn children(&self) -> &[ChildEmbedding<S>] {
        &self.children
    }

    pub fn num_parents(&self) -> usize {
        self.parents.len()
    }

    pub fn num_children(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parent_position(&self, parent_id: &str) -> Option<usize> {
        self.parents
            .binary_search_by(|p| p.parent_id.as_str().cmp(parent_id))
            .ok()
    }

    pub fn parent(&self, parent_id: &str) -> Option<&ParentDoc> {
        self.parent_position(parent_id).map(|i| &self.parents[i])
    }

    /// Range into [`Corpus::children`] owned by the parent at `position`.
    pub fn child_range(&self, position: usize) -> Range<usize> {
        let (start, end) = self.spans[position];
        start..end
    }

    pub fn children_of(&self, parent_id: &str) -> Option<&[ChildEmbedding<S>]> {
        self.parent_position(parent_id)
            .map(|i| &self.children[self.child_range(i)])
    }

    pub fn modality_set(&self) -> BTreeSet<Modality> {
        self.parents
            .iter()
            .flat_map(|p| p.child_count_by_modality.keys().copied())
            .collect()
    }

    /// Position in [`Corpus::parents`] of the parent owning child `index`.
    pub(crate) fn parent_of_child(&self, index: usize) -> usize {
        self.spans.partition_point(|&(_, end)| end <= index)
    }
}

/// Graded relevance judgments: `(query_id, parent_id) → grade`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous grade for the pair, if any.
    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        parent_id: impl Into<String>,
        grade: u32,
    ) -> Option<u32> {
        self.entries
            .entry(query_id.into())
            .or_default()
            .insert(parent_id.into(), grade)
    }

    /// Absent pairs have grade 0.
    pub fn grade(&self, query_id: &str, parent_id: &str) -> u32 {
        self.entries
            .get(query_id)
            .and_then(|m| m.get(parent_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.entries.contains_key(query_id)
    }

    /// Judgments for one query, ascending by parent id.
    pub fn judgments(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.entries
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(p, &g)| (p.as_str(), g)))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
