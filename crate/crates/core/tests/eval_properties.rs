mod common;

use std::collections::{BTreeMap, BTreeSet};

use maxsim_core::eval::{evaluate_run, ndcg_at_k, oracle_rank, EvalOptions};
use maxsim_core::model::{AnnMode, Stage};
use maxsim_core::synth::{synth_corpus, synth_queries, SynthSpec};
use maxsim_core::{build_index, rerank, stage1_run, Error, FilterSpec, Index, Qrels, RetrievalConfig, ScoredParent};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{queries, random_corpus};

fn ranking(ids: &[String]) -> Vec<ScoredParent> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| ScoredParent { parent_id: id.clone(), score: -(i as f32), stage: Stage::Stage2 })
        .collect()
}

fn grades() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(prop_oneof![3 => Just(0u32), 1 => 1u32..4], 1..25)
}

proptest! {
    #[test]
    fn ndcg_stays_in_unit_interval(g in grades(), k in 1usize..30, seed in any::<u64>()) {
        let ids: Vec<String> = (0..g.len()).map(|i| format!("d{i}")).collect();
        let mut qrels = Qrels::new();
        for (id, &grade) in ids.iter().zip(&g) {
            qrels.insert("q", id.clone(), grade);
        }
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = ndcg_at_k(&ranking(&shuffled), &qrels, "q", k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n.value));

        let mut ideal = ids.clone();
        ideal.sort_by_key(|id| std::cmp::Reverse(qrels.grade("q", id)));
        let best = ndcg_at_k(&ranking(&ideal), &qrels, "q", k).unwrap();
        if g.iter().any(|&x| x > 0) {
            prop_assert_eq!(best.value, 1.0);
        } else {
            prop_assert!(best.no_relevant);
        }

        // Reorder only the zero-grade entries among their own slots.
        let slots: Vec<usize> = (0..shuffled.len()).filter(|&i| qrels.grade("q", &shuffled[i]) == 0).collect();
        let mut zeros: Vec<String> = slots.iter().map(|&i| shuffled[i].clone()).collect();
        zeros.reverse();
        let mut permuted = shuffled.clone();
        for (slot, id) in slots.iter().zip(zeros) {
            permuted[*slot] = id;
        }
        let again = ndcg_at_k(&ranking(&permuted), &qrels, "q", k).unwrap();
        prop_assert_eq!(again, n);
    }
}

#[test]
fn oracle_restricted_to_a_subset_equals_rerank_of_it() {
    let index: Index = build_index(random_corpus(12, 80, 20, 32), &RetrievalConfig::default());
    let ids: Vec<String> = index.corpus().parents().iter().map(|p| p.parent_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for q in queries(index.corpus(), 8, 4, 3) {
        let subset: BTreeSet<String> = ids.choose_multiple(&mut rng, 30).cloned().collect();
        let oracle: Vec<_> = oracle_rank(index.corpus(), &q)
            .unwrap()
            .into_iter()
            .filter(|p| subset.contains(&p.parent_id))
            .collect();
        let sl: Vec<ScoredParent> = subset.iter().map(|id| ScoredParent { parent_id: id.clone(), score: 0.0, stage: Stage::Stage1 }).collect();
        let reranked = rerank(&index, &q, &sl, &RetrievalConfig::default()).unwrap().ranking;
        assert_eq!(oracle.len(), reranked.len());
        for (a, b) in oracle.iter().zip(&reranked) {
            assert_eq!(a.parent_id, b.parent_id);
            assert!((a.score - b.score).abs() <= 1e-6);
        }
    }
}

/// Grades that never increase down the oracle ranking.
fn oracle_graded_qrels(index: &Index, qs: &[maxsim_core::QueryEmbedding]) -> Qrels {
    let mut qrels = Qrels::new();
    for q in qs {
        for (i, p) in oracle_rank(index.corpus(), q).unwrap().iter().take(10).enumerate() {
            let grade = match i { 0 => 3, 1..=3 => 2, _ => 1 };
            qrels.insert(q.query_id.clone(), p.parent_id.clone(), grade);
        }
    }
    qrels
}

#[test]
fn stage2_never_beats_the_oracle_under_oracle_monotone_grades() {
    for seed in 0..20u64 {
        let corpus = synth_corpus(&SynthSpec {
            parents: 150,
            dim: [16, 64, 128][seed as usize % 3],
            clusters: 8,
            seed: 1000 + seed,
            ..SynthSpec::default()
        });
        let config = RetrievalConfig { k_per_token: 5, num_candidates: 20, top_m: 3, shortlist_n: 20, ..RetrievalConfig::default() };
        let index: Index = build_index(corpus, &config);
        let (qs, _) = synth_queries(index.corpus(), 8, 6, 0.9, seed);
        let qrels = oracle_graded_qrels(&index, &qs);
        let options = EvalOptions { oracle: true, ..EvalOptions::default() };
        let eval = evaluate_run(&index, &qs, &qrels, &config, &options).unwrap();
        let s2 = eval.metrics.mean("ndcg_stage2", 10).unwrap();
        let oracle = eval.metrics.mean("ndcg_oracle", 10).unwrap();
        assert_eq!(oracle, 1.0);
        assert!(s2 <= oracle + 1e-9, "seed {seed}: {s2} > {oracle}");
    }
}

#[test]
fn a_smaller_shortlist_can_score_above_the_oracle_under_arbitrary_grades() {
    // Oracle ranks an unjudged parent first; a shortlist without it ranks
    // the relevant parent first.
    let mut qrels = Qrels::new();
    qrels.insert("q", "b", 1);
    let oracle = ranking(&["a".into(), "b".into()]);
    let stage2 = ranking(&["b".into()]);
    let o = ndcg_at_k(&oracle, &qrels, "q", 10).unwrap().value;
    let s = ndcg_at_k(&stage2, &qrels, "q", 10).unwrap().value;
    assert!(s > o);
}

#[test]
fn evaluation_table_shape_flags_and_guards() {
    let corpus = random_corpus::<f32>(2, 40, 10, 16);
    let config = RetrievalConfig { ann_mode: AnnMode::ExactFlat, ..RetrievalConfig::default() };
    let index: Index = build_index(corpus, &config);
    let (qs, mut qrels) = synth_queries(index.corpus(), 6, 4, 0.3, 3);
    // q5 keeps only a zero grade
    let target = qrels.judgments("q5").next().unwrap().0.to_string();
    qrels.insert("q5", target, 0);

    let options = EvalOptions { oracle: true, ..EvalOptions::default() };
    let a = evaluate_run(&index, &qs, &qrels, &config, &options).unwrap();
    let b = evaluate_run(&index, &qs, &qrels, &config, &options).unwrap();
    assert_eq!(a.metrics.to_jsonl(), b.metrics.to_jsonl());
    assert_eq!(a.metrics.queries_evaluated, 6);
    assert_eq!(a.metrics.no_relevant, vec!["q5".to_string()]);
    let metrics: BTreeMap<(&str, usize), usize> = a.metrics.means.iter().map(|r| ((r.metric.as_str(), r.k), 1)).collect();
    for k in [1, 3, 5, 10] {
        for m in ["ndcg_stage1", "ndcg_stage2", "ndcg_oracle"] {
            assert!(metrics.contains_key(&(m, k)), "{m}@{k}");
        }
    }
    assert!(metrics.contains_key(&("stage1_recall_oracle_top10", 80)));
    assert_eq!(a.run.stage2["q0"].len(), a.run.stage1["q0"].len());
    assert_eq!(a.run.stage1["q0"], stage1_run(&index, &qs[0], &config, &FilterSpec::any()).unwrap());

    let excluded = evaluate_run(&index, &qs, &qrels, &config, &EvalOptions { exclude_no_relevant: true, ..options.clone() }).unwrap();
    let with = a.metrics.mean("ndcg_stage2", 10).unwrap();
    let without = excluded.metrics.mean("ndcg_stage2", 10).unwrap();
    assert!((without * 5.0 - with * 6.0).abs() < 1e-9);

    let tight = EvalOptions { oracle_ceiling: 10, ..options };
    assert!(matches!(evaluate_run(&index, &qs, &qrels, &config, &tight), Err(Error::OracleRefused { parents: 40, ceiling: 10 })));

    let empty = evaluate_run(&index, &[], &qrels, &config, &EvalOptions::default()).unwrap();
    assert_eq!(empty.metrics.queries_evaluated, 0);
    assert!(empty.metrics.means.is_empty());
}
