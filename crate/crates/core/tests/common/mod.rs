#![allow(dead_code)]

use maxsim_core::model::{ChildEmbedding, Modality, QueryEmbedding};
use maxsim_core::synth::{synth_corpus, synth_queries, SynthSpec};
use maxsim_core::ingest::Corpus;
use maxsim_core::Scalar;

pub fn random_corpus<S: Scalar>(seed: u64, parents: usize, max_children: usize, dim: usize) -> Corpus<S> {
    synth_corpus(&SynthSpec {
        parents,
        min_children: 2,
        max_children,
        dim,
        modalities: vec![Modality::Text],
        clusters: 0,
        seed,
        ..SynthSpec::default()
    })
}

pub fn queries<S: Scalar>(corpus: &Corpus<S>, count: usize, tokens: usize, seed: u64) -> Vec<QueryEmbedding<S>> {
    synth_queries(corpus, count, tokens, 0.5, seed).0
}

/// Σ_i max_j ⟨q_i, d_j⟩ computed in f64 with two plain loops.
pub fn naive_maxsim<S: Scalar>(query: &QueryEmbedding<S>, children: &[ChildEmbedding<S>]) -> f64 {
    let mut total = 0.0;
    for q in query.tokens() {
        let mut best = f64::NEG_INFINITY;
        for c in children {
            let mut d = 0.0;
            for (a, b) in q.as_slice().iter().zip(c.vector.as_slice()) {
                d += a.to_f64().unwrap() * b.to_f64().unwrap();
            }
            best = best.max(d);
        }
        total += best;
    }
    total
}

/// Every parent ranked by the naive score, ties by ascending id.
pub fn naive_ranking<S: Scalar>(corpus: &Corpus<S>, query: &QueryEmbedding<S>) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = corpus
        .parents()
        .iter()
        .enumerate()
        .map(|(pos, p)| {
            let kids = &corpus.children()[corpus.child_range(pos)];
            (p.parent_id.clone(), naive_maxsim(query, kids))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}
