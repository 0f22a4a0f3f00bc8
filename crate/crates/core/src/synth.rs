//! Seeded synthetic corpora, queries and judgments.
//!
//! Children of a parent scatter around a parent topic, and parent topics
//! scatter around cluster centroids. Queries perturb the children of one
//! target parent, which is judged relevant with grade 2.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ingest::{Corpus, Qrels};
use crate::model::{l2_normalize, ChildEmbedding, Modality, ParentDoc, ParentKind, QueryEmbedding, Vector};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub parents: usize,
    pub min_children: usize,
    pub max_children: usize,
    pub dim: usize,
    /// Modalities assigned to children uniformly at random.
    pub modalities: Vec<Modality>,
    /// Number of topic clusters. 0 draws every child independently.
    pub clusters: usize,
    /// Noise norm of a parent topic around its centroid.
    pub parent_spread: f64,
    /// Noise norm of a child around its parent topic.
    pub child_spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            parents: 100,
            min_children: 2,
            max_children: 12,
            dim: 64,
            modalities: vec![Modality::Text],
            clusters: 0,
            parent_spread: 0.6,
            child_spread: 0.5,
            seed: 7,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let sd = scale / (dim as f64).sqrt();
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * sd).collect()
}

fn unit<S: Scalar>(v: &[f64]) -> Vector<S> {
    let v = Vector::new(v.iter().map(|&x| S::lit(x)).collect());
    l2_normalize(&v).expect("gaussian draw is nonzero")
}

fn perturb(base: &[f64], noise: &[f64]) -> Vec<f64> {
    let norm = base.iter().map(|x| x * x).sum::<f64>().sqrt();
    base.iter().zip(noise).map(|(b, n)| b / norm + n).collect()
}

fn kind_for(m: Modality) -> ParentKind {
    match m {
        Modality::Text => ParentKind::Page,
        Modality::Image => ParentKind::Image,
        Modality::VideoFrame => ParentKind::VideoSegment,
    }
}

pub fn synth_corpus<S: Scalar>(spec: &SynthSpec) -> Corpus<S> {
    assert!(spec.dim > 0 && spec.min_children >= 1 && spec.min_children <= spec.max_children);
    assert!(!spec.modalities.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| gaussian(&mut rng, spec.dim, 1.0))
        .collect();
    let width = spec.parents.to_string().len();
    let mut parents = Vec::with_capacity(spec.parents);
    let mut children = Vec::new();
    for p in 0..spec.parents {
        let parent_id = format!("p{p:0width$}");
        let cluster = if spec.clusters > 0 { Some(rng.gen_range(0..spec.clusters)) } else { None };
        let topic = cluster.map(|c| perturb(&centroids[c], &gaussian(&mut rng, spec.dim, spec.parent_spread)));
        let count = rng.gen_range(spec.min_children..=spec.max_children);
        let mut first = None;
        for c in 0..count {
            let modality = *spec.modalities.choose(&mut rng).expect("nonempty");
            first.get_or_insert(modality);
            let raw = match &topic {
                Some(t) => perturb(t, &gaussian(&mut rng, spec.dim, spec.child_spread)),
                None => gaussian(&mut rng, spec.dim, 1.0),
            };
            children.push(ChildEmbedding {
                child_id: format!("{parent_id}-c{c:02}"),
                parent_id: parent_id.clone(),
                modality,
                vector: unit(&raw),
                metadata: Default::default(),
            });
        }
        let mut doc = ParentDoc::new(&parent_id, kind_for(first.expect("count >= 1")));
        if let Some(c) = cluster {
            doc.metadata.insert("cluster".into(), c.to_string());
        }
        parents.push(doc);
    }
    Corpus::new(spec.dim, parents, children).expect("synthetic corpus is well formed")
}

/// `count` queries of `tokens` tokens each. Every token is a child of the
/// target parent plus noise of norm `noise`.
pub fn synth_queries<S: Scalar>(
    corpus: &Corpus<S>,
    count: usize,
    tokens: usize,
    noise: f64,
    seed: u64,
) -> (Vec<QueryEmbedding<S>>, Qrels) {
    assert!(tokens >= 1 && !corpus.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = corpus.dimension();
    let mut qrels = Qrels::new();
    let width = count.to_string().len();
    let queries = (0..count)
        .map(|q| {
            let query_id = format!("q{q:0width$}");
            let target = rng.gen_range(0..corpus.num_parents());
            let kids = &corpus.children()[corpus.child_range(target)];
            let toks = (0..tokens)
                .map(|_| {
                    let child = kids.choose(&mut rng).expect("parent has children");
                    let base: Vec<f64> = child.vector.as_slice().iter().map(|x| x.to_f64().unwrap_or(0.0)).collect();
                    unit(&perturb(&base, &gaussian(&mut rng, dim, noise)))
                })
                .collect();
            qrels.insert(query_id.clone(), corpus.parents()[target].parent_id.clone(), 2);
            QueryEmbedding::new(query_id, toks).expect("normalized tokens")
        })
        .collect();
    (queries, qrels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_within_bounds() {
        let spec = SynthSpec {
            parents: 30,
            min_children: 2,
            max_children: 5,
            dim: 16,
            modalities: vec![Modality::Text, Modality::Image],
            clusters: 3,
            ..SynthSpec::default()
        };
        let a = synth_corpus::<f32>(&spec);
        let b = synth_corpus::<f32>(&spec);
        assert_eq!(a.children(), b.children());
        assert_eq!(a.num_parents(), 30);
        for p in a.parents() {
            assert!((2..=5).contains(&p.child_count()));
            assert!(p.metadata.contains_key("cluster"));
        }
        assert!(a.children().iter().all(|c| c.vector.is_unit()));

        let (qs, qrels) = synth_queries(&a, 4, 3, 0.2, 1);
        assert_eq!(qs.len(), 4);
        assert_eq!(qrels.len(), 4);
        assert!(qs.iter().all(|q| q.len() == 3 && q.dim() == 16));
    }
}
