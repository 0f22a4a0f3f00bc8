use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use maxsim_core::eval::{EvalOptions, MetricRecord};
use maxsim_core::ingest::{load_corpus, load_qrels, load_queries, validate_corpus};
use maxsim_core::{
    build_index, evaluate_run, oracle_rank, rerank, stage1_run, Corpus, Error, Index,
    QueryEmbedding,
};
use serde::Serialize;

use crate::config::{CliConfig, Sweep};
use crate::output::{sink, write_ranking, Format};

fn warn_all(warnings: &[String]) {
    for w in warnings {
        log::warn!("{w}");
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let loaded = load_corpus::<f32>(path)?;
    warn_all(&loaded.warnings);
    Ok(loaded.value)
}

fn read_queries(path: &Path, dim: usize) -> Result<Vec<QueryEmbedding>> {
    let loaded = load_queries::<f32>(path, dim)?;
    warn_all(&loaded.warnings);
    Ok(loaded.value)
}

/// A saved index when `--index` is given, otherwise one built in memory
/// from `--corpus`.
fn open_index(cfg: &CliConfig) -> Result<Index> {
    let index = match (&cfg.index, &cfg.corpus) {
        (Some(path), _) => {
            Index::load(path).with_context(|| format!("opening index {}", path.display()))?
        }
        (None, Some(corpus)) => {
            log::info!("no --index given; indexing {} in memory", corpus.display());
            build_index(read_corpus(corpus)?, &cfg.retrieval)
        }
        (None, None) => bail!("missing --index or --corpus"),
    };
    if index.ann_mode() != cfg.retrieval.ann_mode {
        log::warn!(
            "index was built in {:?} mode; --ann-mode {:?} is ignored",
            index.ann_mode(),
            cfg.retrieval.ann_mode
        );
    }
    Ok(index)
}

pub fn build(cfg: &CliConfig, force: bool) -> Result<()> {
    let corpus_path = cfg.require(&cfg.corpus, "corpus")?;
    let index_path = cfg.require(&cfg.index, "index")?;
    if index_path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", index_path.display());
    }
    let corpus = read_corpus(corpus_path)?;
    let report = validate_corpus(&corpus);
    print!("{report}");
    if !report.is_ok() {
        bail!("corpus failed validation: {}", report.fatal.join("; "));
    }
    let index = build_index(corpus, &cfg.retrieval);
    index.save(index_path)?;
    log::info!("wrote {} ({} children)", index_path.display(), index.len());
    Ok(())
}

pub fn search(cfg: &CliConfig, stage1_only: bool, format: Format, tag: &str) -> Result<()> {
    let index = open_index(cfg)?;
    let queries = read_queries(cfg.require(&cfg.queries, "queries")?, index.dim())?;
    let filter = cfg.filter_spec()?;
    let mut out = sink(cfg.output.as_deref())?;
    for q in &queries {
        let shortlist = stage1_run(&index, q, &cfg.retrieval, &filter)?;
        if stage1_only {
            write_ranking(&mut out, format, &q.query_id, &shortlist, tag)?;
            continue;
        }
        let result = rerank(&index, q, &shortlist, &cfg.retrieval)?;
        log::debug!("{}: {} similarities", q.query_id, result.similarity_count);
        if format == Format::Jsonl {
            write_ranking(&mut out, format, &q.query_id, &shortlist, tag)?;
        }
        write_ranking(&mut out, format, &q.query_id, &result.ranking, tag)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<String>,
    #[serde(flatten)]
    record: &'a MetricRecord,
}

pub struct EvalRequest {
    pub oracle: bool,
    pub sweep: Option<Sweep>,
    pub cutoffs: Vec<usize>,
    pub recall_top: usize,
    pub exclude_no_relevant: bool,
}

pub fn eval(cfg: &CliConfig, req: &EvalRequest) -> Result<()> {
    let index = open_index(cfg)?;
    let queries = read_queries(cfg.require(&cfg.queries, "queries")?, index.dim())?;
    let qrels = load_qrels(cfg.require(&cfg.qrels, "qrels")?)?;
    warn_all(&qrels.warnings);
    let options = EvalOptions {
        cutoffs: req.cutoffs.clone(),
        oracle: req.oracle,
        oracle_ceiling: cfg.oracle_ceiling,
        recall_top: req.recall_top,
        exclude_no_relevant: req.exclude_no_relevant,
        base_filter: cfg.filter_spec()?,
    };

    let blocks: Vec<(Option<String>, _)> = match &req.sweep {
        None => vec![(None, cfg.retrieval.clone())],
        Some(s) => s
            .values
            .iter()
            .map(|&v| Ok((Some(format!("{}={v}", s.key)), s.apply(&cfg.retrieval, v)?)))
            .collect::<Result<_>>()?,
    };

    let mut stdout = std::io::stdout().lock();
    let mut jsonl = match &cfg.output {
        Some(p) => Some(sink(Some(p))?),
        None => None,
    };
    for (label, retrieval) in &blocks {
        let result = match evaluate_run(&index, &queries, &qrels.value, retrieval, &options) {
            Err(e @ Error::OracleRefused { .. }) => {
                bail!("{e}; raise --oracle-ceiling to allow it")
            }
            other => other?,
        };
        if let Some(l) = label {
            writeln!(stdout, "[{l}]")?;
        }
        write!(stdout, "{}", result.metrics.render())?;
        if let Some(out) = jsonl.as_mut() {
            for record in result.metrics.per_query.iter().chain(&result.metrics.means) {
                let line = SweepRecord { sweep: label.clone(), record };
                serde_json::to_writer(&mut *out, &line)?;
                writeln!(out)?;
            }
        }
    }
    if let Some(mut out) = jsonl {
        out.flush()?;
    }
    Ok(())
}

pub fn oracle(cfg: &CliConfig, limit: Option<usize>, format: Format, tag: &str) -> Result<()> {
    let corpus = match (&cfg.corpus, &cfg.index) {
        (Some(path), _) => read_corpus(path)?,
        (None, Some(path)) => Index::load(path)?.corpus().clone(),
        (None, None) => bail!("missing --corpus or --index"),
    };
    if corpus.num_parents() > cfg.oracle_ceiling {
        bail!(
            "{}; raise --oracle-ceiling to allow it",
            Error::OracleRefused { parents: corpus.num_parents(), ceiling: cfg.oracle_ceiling }
        );
    }
    let queries = read_queries(cfg.require(&cfg.queries, "queries")?, corpus.dimension())?;
    let mut out = sink(cfg.output.as_deref())?;
    for q in &queries {
        let mut ranking = oracle_rank(&corpus, q)?;
        if let Some(n) = limit {
            ranking.truncate(n);
        }
        write_ranking(&mut out, format, &q.query_id, &ranking, tag)?;
    }
    out.flush()?;
    Ok(())
}
