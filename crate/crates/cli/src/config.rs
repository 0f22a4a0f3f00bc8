//! Option resolution: built-in defaults, then the TOML file given with
//! `--config`, then environment variables (`MAXSIM_*`) and flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use maxsim_core::model::GraphParams;
use maxsim_core::{AnnMode, FilterSpec, Modality, ModalityWeights, PrecisionMode, RetrievalConfig};
use serde::{Deserialize, Serialize};

/// Options shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML file with option defaults.
    #[arg(long, global = true, env = "MAXSIM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Corpus manifest (line-delimited JSON).
    #[arg(long, global = true, env = "MAXSIM_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true, env = "MAXSIM_QUERIES")]
    pub queries: Option<PathBuf>,
    #[arg(long, global = true, env = "MAXSIM_QRELS")]
    pub qrels: Option<PathBuf>,
    /// Persisted index file.
    #[arg(long, global = true, env = "MAXSIM_INDEX")]
    pub index: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, short, global = true, env = "MAXSIM_OUTPUT")]
    pub output: Option<PathBuf>,

    /// ANN neighbours retrieved per query token.
    #[arg(long = "k", global = true, env = "MAXSIM_K")]
    pub k_per_token: Option<usize>,
    #[arg(long, global = true, env = "MAXSIM_TOP_M")]
    pub top_m: Option<usize>,
    #[arg(long, global = true, env = "MAXSIM_SHORTLIST_N")]
    pub shortlist_n: Option<usize>,
    #[arg(long, global = true, env = "MAXSIM_NUM_CANDIDATES")]
    pub num_candidates: Option<usize>,
    /// Fusion weights, e.g. `text=0.7,image=0.3`.
    #[arg(long, global = true, env = "MAXSIM_WEIGHTS", value_parser = parse_weights)]
    pub weights: Option<BTreeMap<Modality, f64>>,
    /// `exact_flat` or `approximate_graph`.
    #[arg(long, global = true, env = "MAXSIM_ANN_MODE")]
    pub ann_mode: Option<AnnMode>,
    /// `full32` or `mixed16`.
    #[arg(long, global = true, env = "MAXSIM_PRECISION")]
    pub precision: Option<PrecisionMode>,
    #[arg(long, global = true, env = "MAXSIM_CONCURRENCY")]
    pub concurrency: Option<usize>,
    /// Graph construction seed.
    #[arg(long, global = true, env = "MAXSIM_SEED")]
    pub seed: Option<u64>,
    /// Restrict child hits; `modality=<m>` or any metadata `key=value`.
    /// Repeatable; all must hold.
    #[arg(long = "filter", global = true, value_parser = parse_pair)]
    pub filters: Vec<(String, String)>,
    /// Largest corpus (in parents) the oracle will score.
    #[arg(long, global = true, env = "MAXSIM_ORACLE_CEILING")]
    pub oracle_ceiling: Option<usize>,
}

/// Keys accepted in the `--config` file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    corpus: Option<PathBuf>,
    queries: Option<PathBuf>,
    qrels: Option<PathBuf>,
    index: Option<PathBuf>,
    output: Option<PathBuf>,
    k_per_token: Option<usize>,
    top_m: Option<usize>,
    shortlist_n: Option<usize>,
    num_candidates: Option<usize>,
    weights: Option<BTreeMap<Modality, f64>>,
    ann_mode: Option<AnnMode>,
    precision: Option<PrecisionMode>,
    concurrency: Option<usize>,
    seed: Option<u64>,
    max_neighbors: Option<usize>,
    ef_construction: Option<usize>,
    filter: Option<BTreeMap<String, String>>,
    oracle_ceiling: Option<usize>,
}

/// Fully resolved options. Logged before every command runs.
#[derive(Clone, Debug, Serialize)]
pub struct CliConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub filter: BTreeMap<String, String>,
    pub oracle_ceiling: usize,
    pub verbosity: u8,
}

impl CliConfig {
    pub fn resolve(common: &Common, verbosity: u8) -> Result<Self> {
        let (file, base) = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                (file, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        // Relative paths in the file are taken from the file's directory.
        let from_file = |p: Option<PathBuf>| {
            p.map(|p| match &base {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            })
        };

        let mut r = RetrievalConfig::default();
        let mut graph = GraphParams::default();
        macro_rules! layer {
            ($dst:expr, $file:expr, $flag:expr) => {
                if let Some(v) = $file {
                    $dst = v;
                }
                if let Some(v) = $flag.clone() {
                    $dst = v;
                }
            };
        }
        layer!(r.k_per_token, file.k_per_token, common.k_per_token);
        layer!(r.top_m, file.top_m, common.top_m);
        layer!(r.shortlist_n, file.shortlist_n, common.shortlist_n);
        layer!(r.num_candidates, file.num_candidates, common.num_candidates);
        layer!(r.ann_mode, file.ann_mode, common.ann_mode);
        layer!(r.precision_mode, file.precision, common.precision);
        layer!(r.fanout_concurrency, file.concurrency, common.concurrency);
        layer!(graph.seed, file.seed, common.seed);
        layer!(graph.max_neighbors, file.max_neighbors, None::<usize>);
        layer!(graph.ef_construction, file.ef_construction, None::<usize>);
        r.graph = graph;
        let mut weights = None;
        layer!(weights, file.weights.map(Some), common.weights.clone().map(Some));
        if let Some(w) = weights {
            r.modality_weights = ModalityWeights::Explicit(w);
        }
        r.validate()?;

        let mut filter = file.filter.unwrap_or_default();
        for (k, v) in &common.filters {
            filter.insert(k.clone(), v.clone());
        }
        let mut oracle_ceiling = maxsim_core::eval::DEFAULT_ORACLE_CEILING;
        layer!(oracle_ceiling, file.oracle_ceiling, common.oracle_ceiling);

        let config = CliConfig {
            corpus: common.corpus.clone().or(from_file(file.corpus)),
            queries: common.queries.clone().or(from_file(file.queries)),
            qrels: common.qrels.clone().or(from_file(file.qrels)),
            index: common.index.clone().or(from_file(file.index)),
            output: common.output.clone().or(from_file(file.output)),
            retrieval: r,
            filter,
            oracle_ceiling,
            verbosity,
        };
        config.filter_spec()?;
        Ok(config)
    }

    pub fn filter_spec(&self) -> Result<FilterSpec> {
        let mut spec = FilterSpec::any();
        for (k, v) in &self.filter {
            spec = if k == "modality" {
                spec.with_modality(v.parse()?)
            } else {
                spec.with_metadata(k, v)
            };
        }
        Ok(spec)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match path {
            Some(p) => Ok(p),
            None => bail!("missing --{flag}"),
        }
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got `{s}`")),
    }
}

fn parse_weights(s: &str) -> Result<BTreeMap<Modality, f64>, String> {
    let mut out = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = parse_pair(part)?;
        let m: Modality = k.parse().map_err(|e| format!("{e}"))?;
        let w: f64 = v.parse().map_err(|_| format!("bad weight `{v}` for {m}"))?;
        out.insert(m, w);
    }
    if out.is_empty() {
        return Err("no weights given".into());
    }
    Ok(out)
}

/// One `--sweep key=v1,v2,...` axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<usize>,
}

impl Sweep {
    pub fn apply(&self, base: &RetrievalConfig, value: usize) -> Result<RetrievalConfig> {
        let mut c = base.clone();
        match self.key.as_str() {
            "top_m" => c.top_m = value,
            "k" | "k_per_token" => c.k_per_token = value,
            "num_candidates" => c.num_candidates = value,
            "shortlist_n" => c.shortlist_n = value,
            other => bail!("cannot sweep `{other}`"),
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let (key, values) = parse_pair(s)?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| format!("bad sweep value `{v}`")))
        .collect::<Result<Vec<_>, _>>()?;
    if !["top_m", "k", "k_per_token", "num_candidates", "shortlist_n"].contains(&key.as_str()) {
        return Err(format!("cannot sweep `{key}`"));
    }
    Ok(Sweep { key, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "top_m = 4\nshortlist_n = 20\ncorpus = \"corpus.jsonl\"\n[filter]\nlang = \"en\"\n").unwrap();
        let common = Common {
            config: Some(path),
            top_m: Some(6),
            filters: vec![("modality".into(), "image".into())],
            ..Common::default()
        };
        let c = CliConfig::resolve(&common, 0).unwrap();
        assert_eq!(c.retrieval.top_m, 6);
        assert_eq!(c.retrieval.shortlist_n, 20);
        assert_eq!(c.retrieval.k_per_token, 10);
        assert_eq!(c.corpus.as_deref(), Some(dir.path().join("corpus.jsonl").as_path()));
        let f = c.filter_spec().unwrap();
        assert_eq!(f.modality, Some(Modality::Image));
        assert_eq!(f.metadata_equals.get("lang").map(String::as_str), Some("en"));
    }

    #[test]
    fn unknown_file_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "topm = 4\n").unwrap();
        let common = Common { config: Some(path), ..Common::default() };
        assert!(CliConfig::resolve(&common, 0).is_err());
    }

    #[test]
    fn parsers() {
        let w = parse_weights("text=0.7, image=0.3").unwrap();
        assert_eq!(w[&Modality::Text], 0.7);
        assert!(parse_weights("audio=1").is_err());
        assert!(parse_pair("novalue").is_err());
        let s = parse_sweep("top_m=1,4,12").unwrap();
        assert_eq!(s.values, vec![1, 4, 12]);
        assert!(parse_sweep("seed=1").is_err());
    }
}
