use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::Corpus;
use crate::model::Modality;
use crate::scalar::Scalar;

/// Corpus statistics plus any fatal findings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dimension: usize,
    pub parent_count: usize,
    pub child_count: usize,
    pub modality_set: BTreeSet<Modality>,
    pub children_by_modality: BTreeMap<Modality, usize>,
    /// children-per-parent → number of parents with that many children
    pub child_count_histogram: BTreeMap<usize, usize>,
    pub mean_children_per_parent: f64,
    pub fatal: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.fatal.is_empty()
    }
}

pub fn validate_corpus<S: Scalar>(corpus: &Corpus<S>) -> ValidationReport {
    let mut children_by_modality = BTreeMap::new();
    let mut histogram = BTreeMap::new();
    for p in corpus.parents() {
        for (&m, &n) in &p.child_count_by_modality {
            *children_by_modality.entry(m).or_insert(0) += n;
        }
        *histogram.entry(p.child_count()).or_insert(0) += 1;
    }

    let mut fatal = Vec::new();
    if corpus.is_empty() {
        fatal.push("no parents".to_string());
    }
    let mean = if corpus.is_empty() {
        0.0
    } else {
        corpus.num_children() as f64 / corpus.num_parents() as f64
    };

    ValidationReport {
        dimension: corpus.dimension(),
        parent_count: corpus.num_parents(),
        child_count: corpus.num_children(),
        modality_set: corpus.modality_set(),
        children_by_modality,
        child_count_histogram: histogram,
        mean_children_per_parent: mean,
        fatal,
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dimension            {}", self.dimension)?;
        writeln!(f, "parents              {}", self.parent_count)?;
        writeln!(f, "children             {}", self.child_count)?;
        writeln!(f, "mean children/parent {:.3}", self.mean_children_per_parent)?;
        for (m, n) in &self.children_by_modality {
            writeln!(f, "  {m:<18} {n}")?;
        }
        writeln!(f, "children-per-parent histogram:")?;
        for (size, parents) in &self.child_count_histogram {
            writeln!(f, "  {size:>6} children: {parents} parents")?;
        }
        for msg in &self.fatal {
            writeln!(f, "FATAL: {msg}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChildEmbedding, ParentDoc, ParentKind, Vector};

    fn corpus(sizes: &[usize]) -> Corpus<f32> {
        let mut parents = Vec::new();
        let mut children = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            parents.push(ParentDoc::new(format!("p{i}"), ParentKind::Page));
            for j in 0..n {
                children.push(ChildEmbedding {
                    child_id: format!("p{i}c{j}"),
                    parent_id: format!("p{i}"),
                    modality: Modality::Text,
                    vector: Vector::new(vec![1.0, 0.0]),
                    metadata: Default::default(),
                });
            }
        }
        Corpus::new(2, parents, children).unwrap()
    }

    #[test]
    fn mean_and_histogram() {
        let r = validate_corpus(&corpus(&[2, 3]));
        assert_eq!(r.mean_children_per_parent, 2.5);
        assert_eq!(r.child_count_histogram, [(2, 1), (3, 1)].into());
        assert_eq!(r.modality_set, [Modality::Text].into());
        assert!(r.is_ok());
    }

    #[test]
    fn empty_corpus_is_fatal() {
        let r = validate_corpus(&corpus(&[]));
        assert_eq!(r.fatal, ["no parents"]);
        assert!(!r.is_ok());
    }
}
