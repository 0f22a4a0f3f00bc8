mod common;

use std::collections::BTreeSet;

use maxsim_core::ingest::Corpus;
use maxsim_core::model::{AnnMode, ChildEmbedding, Modality, PrecisionMode, Stage, Vector};
use maxsim_core::stage1::{fanout_search, topm_aggregate};
use maxsim_core::stage2::{exact_maxsim_reduced, rerank_with, RerankOptions};
use maxsim_core::synth::{synth_corpus, synth_queries, SynthSpec};
use maxsim_core::{build_index, exact_maxsim, rerank, FilterSpec, Index, QueryEmbedding, RetrievalConfig, ScoredParent};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{naive_maxsim, queries, random_corpus};

fn shortlist_of(ids: &[&str]) -> Vec<ScoredParent> {
    ids.iter()
        .map(|id| ScoredParent { parent_id: id.to_string(), score: 0.0, stage: Stage::Stage1 })
        .collect()
}

#[test]
fn exact_maxsim_matches_double_loop() {
    for seed in 0..10 {
        let dim = [16, 64, 128][seed as usize % 3];
        let index: Index = build_index(random_corpus(seed, 30, 25, dim), &RetrievalConfig::default());
        for q in queries(index.corpus(), 4, 6, seed) {
            for p in index.corpus().parents() {
                let m = index.children_of(&p.parent_id, None).unwrap();
                let got = exact_maxsim(&q, &m).unwrap() as f64;
                let want = naive_maxsim(&q, index.corpus().children_of(&p.parent_id).unwrap());
                assert!((got - want).abs() <= 1e-5, "{got} vs {want}");
                assert!(got.abs() <= q.len() as f64 + 1e-5);
            }
        }
    }
}

#[test]
fn rerank_keeps_exactly_the_shortlist_and_counts_similarities() {
    let index: Index = build_index(random_corpus(3, 60, 30, 32), &RetrievalConfig::default());
    let ids: Vec<&str> = index.corpus().parents().iter().map(|p| p.parent_id.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for q in queries(index.corpus(), 10, 5, 9) {
        let mut pick: Vec<&str> = ids.choose_multiple(&mut rng, 25).copied().collect();
        pick.push(pick[0]);
        let result = rerank(&index, &q, &shortlist_of(&pick), &RetrievalConfig::default()).unwrap();
        let want: BTreeSet<&str> = pick.iter().copied().collect();
        let got: BTreeSet<&str> = result.ranking.iter().map(|p| p.parent_id.as_str()).collect();
        assert_eq!(got, want);
        assert_eq!(result.ranking.len(), want.len());
        let expected: u64 = want
            .iter()
            .map(|id| (q.len() * index.corpus().children_of(id).unwrap().len()) as u64)
            .sum();
        assert_eq!(result.similarity_count, expected);

        let unbatched = rerank_with(
            &index,
            &q,
            &shortlist_of(&pick),
            &RetrievalConfig::default(),
            RerankOptions { disable_batching: true, ..RerankOptions::default() },
        )
        .unwrap();
        assert_eq!(unbatched.ranking, result.ranking);
    }
}

/// The same corpus folded into the nonnegative orthant, so every
/// similarity is at least 0.
fn nonnegative(corpus: Corpus<f32>) -> Corpus<f32> {
    let children: Vec<ChildEmbedding<f32>> = corpus
        .children()
        .iter()
        .map(|c| ChildEmbedding {
            vector: Vector::new(c.vector.as_slice().iter().map(|x| x.abs()).collect()),
            ..c.clone()
        })
        .collect();
    Corpus::new(corpus.dimension(), corpus.parents().to_vec(), children).unwrap()
}

#[test]
fn exact_score_dominates_topm_of_exact_maxima() {
    let corpus = nonnegative(random_corpus(8, 40, 12, 24));
    let total = corpus.num_children();
    let config = RetrievalConfig {
        ann_mode: AnnMode::ExactFlat,
        k_per_token: total,
        num_candidates: total,
        ..RetrievalConfig::default()
    };
    let index: Index = build_index(corpus, &config);
    let raw: Vec<QueryEmbedding> = queries(index.corpus(), 6, 6, 2)
        .into_iter()
        .map(|q| {
            let toks = q.tokens().iter().map(|t| Vector::new(t.as_slice().iter().map(|x| x.abs()).collect())).collect();
            QueryEmbedding::from_raw(q.query_id.clone(), toks).unwrap()
        })
        .collect();
    for q in &raw {
        let table = fanout_search(&index, q, &config, &FilterSpec::any()).unwrap();
        for m in 1..=q.len() {
            for s in topm_aggregate(&table, m) {
                let children = index.children_of(&s.parent_id, None).unwrap();
                let exact = exact_maxsim(q, &children).unwrap();
                assert!(exact >= s.approx_score - 1e-6, "{exact} < {}", s.approx_score);
            }
        }
    }
}

#[test]
fn dominance_needs_nonnegative_maxima() {
    let corpus = Corpus::new(
        2,
        vec![maxsim_core::model::ParentDoc::new("p", maxsim_core::ParentKind::Page)],
        vec![ChildEmbedding {
            child_id: "c".into(),
            parent_id: "p".into(),
            modality: Modality::Text,
            vector: Vector::new(vec![1.0f32, 0.0]),
            metadata: Default::default(),
        }],
    )
    .unwrap();
    let q = QueryEmbedding::new("q", vec![Vector::new(vec![1.0, 0.0]), Vector::new(vec![-1.0, 0.0])]).unwrap();
    let config = RetrievalConfig { ann_mode: AnnMode::ExactFlat, k_per_token: 1, num_candidates: 1, ..RetrievalConfig::default() };
    let index: Index = build_index(corpus, &config);
    let table = fanout_search(&index, &q, &config, &FilterSpec::any()).unwrap();
    let top1 = topm_aggregate(&table, 1)[0].approx_score;
    let exact = exact_maxsim(&q, &index.children_of("p", None).unwrap()).unwrap();
    assert_eq!((top1, exact), (1.0, 0.0));
}

#[test]
fn half_precision_error_is_bounded() {
    let corpus: Corpus<f32> = synth_corpus(&SynthSpec {
        parents: 100,
        min_children: 2,
        max_children: 40,
        dim: 128,
        clusters: 10,
        seed: 31,
        ..SynthSpec::default()
    });
    let index: Index = build_index(corpus, &RetrievalConfig { ann_mode: AnnMode::ExactFlat, ..RetrievalConfig::default() });
    let (qs, _) = synth_queries(index.corpus(), 10, 16, 0.5, 32);
    let mut pairs = 0;
    for q in &qs {
        for p in index.corpus().parents() {
            let m = index.children_of(&p.parent_id, None).unwrap();
            let a = exact_maxsim(q, &m).unwrap();
            let b = exact_maxsim_reduced(q, &m).unwrap();
            assert!((a - b).abs() <= 5e-3 * q.len() as f32);
            pairs += 1;
        }
    }
    assert_eq!(pairs, 1000);

    let mixed = RetrievalConfig { precision_mode: PrecisionMode::Mixed16, ..RetrievalConfig::default() };
    let all = shortlist_of(&index.corpus().parents().iter().map(|p| p.parent_id.as_str()).collect::<Vec<_>>());
    for q in &qs {
        let r = rerank(&index, q, &all, &mixed).unwrap();
        for p in &r.ranking {
            let m = index.children_of(&p.parent_id, None).unwrap();
            assert_eq!(p.score, exact_maxsim_reduced(q, &m).unwrap());
        }
    }
}
