mod common;

use maxsim_core::index::{FilterSpec, IndexParams};
use maxsim_core::model::{AnnMode, GraphParams, Modality};
use maxsim_core::synth::{synth_corpus, synth_queries, SynthSpec};
use maxsim_core::{build_index, Index, RetrievalConfig};
use proptest::prelude::*;

fn mixed_spec(seed: u64, parents: usize) -> SynthSpec {
    SynthSpec {
        parents,
        min_children: 2,
        max_children: 8,
        dim: 16,
        modalities: vec![Modality::Text, Modality::Image, Modality::VideoFrame],
        clusters: 4,
        seed,
        ..SynthSpec::default()
    }
}

fn flat() -> RetrievalConfig {
    RetrievalConfig { ann_mode: AnnMode::ExactFlat, ..RetrievalConfig::default() }
}

#[test]
fn flat_knn_equals_exhaustive_search() {
    let index: Index = build_index(synth_corpus(&mixed_spec(1, 120)), &flat());
    let (qs, _) = synth_queries(index.corpus(), 20, 4, 0.5, 2);
    let filters = [
        FilterSpec::any(),
        FilterSpec::modality(Modality::Image),
        FilterSpec::any().with_metadata("cluster", "2"),
        FilterSpec::modality(Modality::Text).with_metadata("cluster", "0"),
        FilterSpec::any().with_metadata("cluster", "absent"),
    ];
    for q in &qs {
        for token in q.tokens() {
            for f in &filters {
                for k in [1, 7, 50, 10_000] {
                    let a = index.knn(token, k, f, 250).unwrap();
                    let b = index.exact_knn(token, k, f).unwrap();
                    assert_eq!(a, b);
                }
            }
        }
    }
}

#[test]
fn graph_recall_is_monotone_in_beam_width() {
    let index: Index = build_index(synth_corpus(&mixed_spec(3, 800)), &RetrievalConfig::default());
    let (qs, _) = synth_queries(index.corpus(), 40, 3, 0.8, 4);
    let tokens: Vec<_> = qs.iter().flat_map(|q| q.tokens().iter().cloned()).collect();
    assert!(tokens.len() >= 100);
    let k = 10;
    let mut means = Vec::new();
    for nc in [k, 2 * k, 4 * k, 8 * k] {
        let mut total = 0.0;
        for t in &tokens {
            let truth: Vec<_> = index.exact_knn(t, k, &FilterSpec::any()).unwrap();
            let got = index.knn(t, k, &FilterSpec::any(), nc).unwrap();
            let hit = got.iter().filter(|h| truth.iter().any(|g| g.child_id == h.child_id)).count();
            total += hit as f64 / truth.len() as f64;
        }
        means.push(total / tokens.len() as f64);
    }
    for w in means.windows(2) {
        assert!(w[1] + 0.02 >= w[0], "recall dropped: {means:?}");
    }
    assert!(means[3] > 0.9, "{means:?}");
}

#[test]
fn same_seed_same_results() {
    let config = RetrievalConfig::default();
    let a: Index = build_index(synth_corpus(&mixed_spec(5, 200)), &config);
    let b: Index = build_index(synth_corpus(&mixed_spec(5, 200)), &config);
    let (qs, _) = synth_queries(a.corpus(), 10, 3, 0.5, 6);
    let f = FilterSpec::modality(Modality::Image);
    for t in qs.iter().flat_map(|q| q.tokens()) {
        assert_eq!(a.knn(t, 10, &f, 50).unwrap(), b.knn(t, 10, &f, 50).unwrap());
    }
}

#[test]
fn saved_index_answers_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.idx");
    let params = IndexParams { ann_mode: AnnMode::ApproximateGraph, graph: GraphParams { seed: 9, ..GraphParams::default() } };
    let index: Index = Index::build(synth_corpus(&mixed_spec(7, 150)), params);
    index.save(&path).unwrap();
    let loaded: Index = Index::load(&path).unwrap();
    let (qs, _) = synth_queries(index.corpus(), 5, 3, 0.5, 8);
    for t in qs.iter().flat_map(|q| q.tokens()) {
        let f = FilterSpec::any();
        assert_eq!(index.knn(t, 10, &f, 40).unwrap(), loaded.knn(t, 10, &f, 40).unwrap());
    }
}

fn filter_strategy() -> impl Strategy<Value = FilterSpec> {
    (
        prop::option::of(prop::sample::select(Modality::ALL.to_vec())),
        prop::option::of(0u8..5),
    )
        .prop_map(|(m, cluster)| {
            let mut f = FilterSpec::any();
            if let Some(m) = m {
                f = f.with_modality(m);
            }
            if let Some(c) = cluster {
                f = f.with_metadata("cluster", c.to_string());
            }
            f
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hits_satisfy_their_filter(
        seed in 0u64..1_000,
        graph in any::<bool>(),
        filter in filter_strategy(),
        k in 1usize..30,
        nc in 1usize..120,
    ) {
        let mode = if graph { AnnMode::ApproximateGraph } else { AnnMode::ExactFlat };
        let config = RetrievalConfig { ann_mode: mode, ..RetrievalConfig::default() };
        let index: Index = build_index(synth_corpus(&mixed_spec(seed, 40)), &config);
        let (qs, _) = synth_queries(index.corpus(), 2, 2, 0.5, seed + 1);
        for t in qs.iter().flat_map(|q| q.tokens()) {
            let hits = index.knn(t, k, &filter, nc.max(k)).unwrap();
            prop_assert!(hits.len() <= k);
            for h in &hits {
                let parent = index.corpus().parent(&h.parent_id).unwrap();
                let child = index
                    .corpus()
                    .children_of(&h.parent_id)
                    .unwrap()
                    .iter()
                    .find(|c| c.child_id == h.child_id)
                    .unwrap();
                prop_assert_eq!(child.modality, h.modality);
                prop_assert!(filter.matches(child.modality, &child.metadata, &parent.metadata));
            }
        }
    }
}
