//! Brute-force exact MaxSim oracle and ranking metrics.
//!
//! nDCG uses exponential gain `2^grade - 1` and a `log2(rank + 1)`
//! discount, the trec_eval convention. Linear-gain variants give different
//! numbers.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{ChildMatrix, FilterSpec, Index};
use crate::ingest::{Corpus, Qrels};
use crate::model::{sort_ranking, QueryEmbedding, RetrievalConfig, ScoredParent, Stage};
use crate::scalar::Scalar;
use crate::stage1::stage1_run;
use crate::stage2::{exact_maxsim, rerank};

/// Default largest corpus (in parents) the oracle will score.
pub const DEFAULT_ORACLE_CEILING: usize = 5_000;

/// Exact MaxSim for every parent of `corpus`, fully ranked.
pub fn oracle_rank<S: Scalar>(
    corpus: &Corpus<S>,
    query: &QueryEmbedding<S>,
) -> Result<Vec<ScoredParent<S>>> {
    let dim = corpus.dimension();
    let mut ranking = Vec::with_capacity(corpus.num_parents());
    for (pos, parent) in corpus.parents().iter().enumerate() {
        let children = &corpus.children()[corpus.child_range(pos)];
        let ids = children.iter().map(|c| c.child_id.as_str()).collect();
        let data: Vec<S> = children
            .iter()
            .flat_map(|c| c.vector.as_slice().iter().copied())
            .collect();
        let matrix = ChildMatrix::new(dim, ids, Cow::Owned(data));
        ranking.push(ScoredParent {
            parent_id: parent.parent_id.clone(),
            score: exact_maxsim(query, &matrix)?,
            stage: Stage::Oracle,
        });
    }
    sort_ranking(&mut ranking);
    Ok(ranking)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NdcgOutcome {
    pub value: f64,
    /// The query has no judged-relevant parent; `value` is 0.
    pub no_relevant: bool,
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn ndcg_at_k<S: Scalar>(
    ranking: &[ScoredParent<S>],
    qrels: &Qrels,
    query_id: &str,
    k: usize,
) -> Result<NdcgOutcome> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    let mut ideal: Vec<u32> = qrels
        .judgments(query_id)
        .map(|(_, g)| g)
        .filter(|&g| g > 0)
        .collect();
    if ideal.is_empty() {
        return Ok(NdcgOutcome {
            value: 0.0,
            no_relevant: true,
        });
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, p)| gain(qrels.grade(query_id, &p.parent_id)) / discount(i + 1))
        .sum();
    Ok(NdcgOutcome {
        value: dcg / idcg,
        no_relevant: false,
    })
}

/// Fraction of the oracle's top `r` found among the first `n` candidates.
/// When the oracle ranks fewer than `r` parents the denominator shrinks to
/// what it has.
pub fn recall_at_n<S: Scalar>(
    candidates: &[ScoredParent<S>],
    oracle: &[ScoredParent<S>],
    n: usize,
    r: usize,
) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidRecallCutoff);
    }
    let target: HashSet<&str> = oracle.iter().take(r).map(|p| p.parent_id.as_str()).collect();
    if target.is_empty() {
        return Ok(0.0);
    }
    let found = candidates
        .iter()
        .take(n)
        .filter(|p| target.contains(p.parent_id.as_str()))
        .count();
    Ok(found as f64 / target.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    pub oracle: bool,
    pub oracle_ceiling: usize,
    /// `r` in Stage-1 recall of the oracle top-`r`.
    pub recall_top: usize,
    /// Leave queries without relevant judgments out of the means.
    pub exclude_no_relevant: bool,
    pub base_filter: FilterSpec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cutoffs: vec![1, 3, 5, 10],
            oracle: false,
            oracle_ceiling: DEFAULT_ORACLE_CEILING,
            recall_top: 10,
            exclude_no_relevant: false,
            base_filter: FilterSpec::any(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TimingSummary {
    pub stage1: Duration,
    pub stage2: Duration,
    pub oracle: Duration,
}

#[derive(Clone, Debug)]
pub struct RunResult<S> {
    pub stage1: BTreeMap<String, Vec<ScoredParent<S>>>,
    pub stage2: BTreeMap<String, Vec<ScoredParent<S>>>,
    pub oracle: Option<BTreeMap<String, Vec<ScoredParent<S>>>>,
    pub config: RetrievalConfig,
    pub timing: TimingSummary,
}

/// One `(query_id, metric, k, value)` row. Means use query id `all`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub query_id: String,
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricTable {
    pub per_query: Vec<MetricRecord>,
    pub means: Vec<MetricRecord>,
    pub no_relevant: Vec<String>,
    pub skipped: Vec<SkippedQuery>,
    pub queries_evaluated: usize,
}

impl MetricTable {
    pub fn mean(&self, metric: &str, k: usize) -> Option<f64> {
        self.means
            .iter()
            .find(|r| r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    /// Per-query rows then means, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.per_query.iter().chain(&self.means) {
            out.push_str(&serde_json::to_string(r).expect("metric record serializes"));
            out.push('\n');
        }
        out
    }

    /// Fixed-width table of the means.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<32} {:>6} {:>10}", "metric", "k", "mean");
        for r in &self.means {
            let _ = writeln!(out, "{:<32} {:>6} {:>10.4}", r.metric, r.k, r.value);
        }
        let _ = writeln!(out, "queries evaluated: {}", self.queries_evaluated);
        if !self.no_relevant.is_empty() {
            let _ = writeln!(out, "queries without relevant judgments: {}", self.no_relevant.len());
        }
        for s in &self.skipped {
            let _ = writeln!(out, "skipped {}: {}", s.query_id, s.reason);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation<S> {
    pub run: RunResult<S>,
    pub metrics: MetricTable,
}

pub fn recall_metric_name(r: usize) -> String {
    format!("stage1_recall_oracle_top{r}")
}

/// Runs both stages (and optionally the oracle) for every query and scores
/// the rankings against `qrels`.
pub fn evaluate_run<S: Scalar>(
    index: &Index<S>,
    queries: &[QueryEmbedding<S>],
    qrels: &Qrels,
    config: &RetrievalConfig,
    options: &EvalOptions,
) -> Result<Evaluation<S>> {
    config.validate()?;
    let corpus = index.corpus();
    if options.oracle && corpus.num_parents() > options.oracle_ceiling {
        return Err(Error::OracleRefused {
            parents: corpus.num_parents(),
            ceiling: options.oracle_ceiling,
        });
    }
    if queries.is_empty() {
        log::warn!("no queries to evaluate");
    }

    let mut run = RunResult {
        stage1: BTreeMap::new(),
        stage2: BTreeMap::new(),
        oracle: options.oracle.then(BTreeMap::new),
        config: config.clone(),
        timing: TimingSummary::default(),
    };
    let mut table = MetricTable::default();

    let mut ordered: Vec<&QueryEmbedding<S>> = queries.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    // metric name → k → per-query values, for the means
    let mut pooled: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();

    for query in ordered {
        let qid = query.query_id.clone();
        let outcome = (|| -> Result<_> {
            let t = Instant::now();
            let s1 = stage1_run(index, query, config, &options.base_filter)?;
            let t1 = t.elapsed();
            let t = Instant::now();
            let s2 = rerank(index, query, &s1, config)?.ranking;
            let t2 = t.elapsed();
            let t = Instant::now();
            let oracle = if options.oracle {
                Some(oracle_rank(corpus, query)?)
            } else {
                None
            };
            Ok((s1, s2, oracle, t1, t2, t.elapsed()))
        })();
        let (s1, s2, oracle, t1, t2, t3) = match outcome {
            Ok(v) => v,
            Err(e) => {
                log::warn!("query {qid} skipped: {e}");
                table.skipped.push(SkippedQuery {
                    query_id: qid,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        run.timing.stage1 += t1;
        run.timing.stage2 += t2;
        run.timing.oracle += t3;

        let mut rows = Vec::new();
        let mut no_relevant = false;
        for &k in &options.cutoffs {
            let mut lists: Vec<(&str, &[ScoredParent<S>])> =
                vec![("ndcg_stage2", &s2), ("ndcg_stage1", &s1)];
            if let Some(o) = &oracle {
                lists.push(("ndcg_oracle", o));
            }
            for (metric, ranking) in lists {
                let n = ndcg_at_k(ranking, qrels, &qid, k)?;
                no_relevant |= n.no_relevant;
                rows.push((metric.to_string(), k, n.value));
            }
        }
        if let Some(o) = &oracle {
            let r = recall_at_n(&s1, o, config.shortlist_n, options.recall_top)?;
            rows.push((recall_metric_name(options.recall_top), config.shortlist_n, r));
        }

        if no_relevant {
            table.no_relevant.push(qid.clone());
        }
        let counted = !(no_relevant && options.exclude_no_relevant);
        for (metric, k, value) in rows {
            if counted {
                pooled.entry((metric.clone(), k)).or_default().push(value);
            }
            table.per_query.push(MetricRecord {
                query_id: qid.clone(),
                metric,
                k,
                value,
            });
        }
        table.queries_evaluated += 1;

        run.stage1.insert(qid.clone(), s1);
        run.stage2.insert(qid.clone(), s2);
        if let (Some(map), Some(o)) = (run.oracle.as_mut(), oracle) {
            map.insert(qid, o);
        }
    }

    table.means = pooled
        .into_iter()
        .map(|((metric, k), values)| MetricRecord {
            query_id: "all".into(),
            metric,
            k,
            value: values.iter().sum::<f64>() / values.len() as f64,
        })
        .collect();

    log::info!(
        "evaluated {} queries (stage1 {:?}, stage2 {:?}, oracle {:?})",
        table.queries_evaluated,
        run.timing.stage1,
        run.timing.stage2,
        run.timing.oracle
    );
    Ok(Evaluation { run, metrics: table })
}
