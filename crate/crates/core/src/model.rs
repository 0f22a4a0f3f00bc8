//! Domain types shared by ingestion, indexing, both retrieval stages and
//! evaluation, plus the vector primitives everything else is built on.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat string metadata attached to parents and children.
pub type Metadata = BTreeMap<String, String>;

/// Tolerance on `|‖v‖ - 1|` for a vector to count as unit-norm.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Dense embedding in the shared similarity space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "S: Scalar")]
pub struct Vector<S>(Vec<S>);

impl<S: Scalar> Vector<S> {
    pub fn new(values: Vec<S>) -> Self {
        Vector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    pub fn norm(&self) -> S {
        dot_slice(&self.0, &self.0).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        self.norm_deviation() <= UNIT_NORM_TOLERANCE
    }

    /// `|‖v‖ - 1|` in `f64`.
    pub fn norm_deviation(&self) -> f64 {
        (self.norm().to_f64().unwrap_or(f64::NAN) - 1.0).abs()
    }
}

impl<S: Scalar> From<Vec<S>> for Vector<S> {
    fn from(values: Vec<S>) -> Self {
        Vector(values)
    }
}

impl<S> AsRef<[S]> for Vector<S> {
    fn as_ref(&self) -> &[S] {
        &self.0
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize<S: Scalar>(v: &Vector<S>) -> Result<Vector<S>> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(String::new()));
    }
    let norm = v.norm();
    if norm == S::zero() {
        return Err(Error::ZeroVector(String::new()));
    }
    Ok(Vector(v.0.iter().map(|&x| x / norm).collect()))
}

/// Inner product of two equal-length vectors.
pub fn dot<S: Scalar>(a: &Vector<S>, b: &Vector<S>) -> Result<S> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
            locator: String::new(),
        });
    }
    Ok(dot_slice(&a.0, &b.0))
}

/// Sequential left-to-right dot product. Every similarity in the crate goes
/// through this function so that different code paths agree bit-for-bit.
#[inline]
pub(crate) fn dot_slice<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Origin of a child embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    VideoFrame,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::VideoFrame];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::VideoFrame => "video_frame",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "video_frame" => Ok(Modality::VideoFrame),
            other => Err(Error::parse("modality", format!("unknown modality `{other}`"))),
        }
    }
}

/// What a parent stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentKind {
    Page,
    Image,
    VideoSegment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ChildEmbedding<S> {
    pub child_id: String,
    pub parent_id: String,
    pub modality: Modality,
    pub vector: Vector<S>,
    #[serde(default)]
    pub metadata: Metadata,
}

/// Atomic retrievable unit; owns one or more child embeddings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentDoc {
    pub parent_id: String,
    pub kind: ParentKind,
    #[serde(default)]
    pub metadata: Metadata,
    /// Derived from the corpus children; overwritten on corpus construction.
    #[serde(default)]
    pub child_count_by_modality: BTreeMap<Modality, usize>,
}

impl ParentDoc {
    pub fn new(parent_id: impl Into<String>, kind: ParentKind) -> Self {
        ParentDoc {
            parent_id: parent_id.into(),
            kind,
            metadata: Metadata::new(),
            child_count_by_modality: BTreeMap::new(),
        }
    }

    pub fn child_count(&self) -> usize {
        self.child_count_by_modality.values().sum()
    }
}

/// Token-level embedding of one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct QueryEmbedding<S> {
    pub query_id: String,
    tokens: Vec<Vector<S>>,
}

impl<S: Scalar> QueryEmbedding<S> {
    /// Accepts tokens that are already unit-norm; rejects anything else.
    pub fn new(query_id: impl Into<String>, tokens: Vec<Vector<S>>) -> Result<Self> {
        let query_id = query_id.into();
        if tokens.is_empty() {
            return Err(Error::EmptyQuery(query_id));
        }
        let dim = tokens[0].dim();
        for (i, t) in tokens.iter().enumerate() {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: t.dim(),
                    locator: format!("query {query_id} token {i}"),
                });
            }
            if !t.is_unit() {
                return Err(Error::UnnormalizedQuery {
                    norm: t.norm().to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(QueryEmbedding { query_id, tokens })
    }

    /// Normalizes every token before construction.
    pub fn from_raw(query_id: impl Into<String>, raw: Vec<Vector<S>>) -> Result<Self> {
        let tokens = raw.iter().map(l2_normalize).collect::<Result<Vec<_>>>()?;
        Self::new(query_id, tokens)
    }

    pub fn tokens(&self) -> &[Vector<S>] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    #[default]
    Full32,
    Mixed16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnMode {
    ExactFlat,
    #[default]
    ApproximateGraph,
}

impl FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full32" => Ok(PrecisionMode::Full32),
            "mixed16" => Ok(PrecisionMode::Mixed16),
            other => Err(Error::InvalidConfig(format!("unknown precision mode `{other}`"))),
        }
    }
}

impl FromStr for AnnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_flat" => Ok(AnnMode::ExactFlat),
            "approximate_graph" => Ok(AnnMode::ApproximateGraph),
            other => Err(Error::InvalidConfig(format!("unknown ann mode `{other}`"))),
        }
    }
}

/// Navigable small-world graph construction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    /// Neighbors kept per node on upper layers; layer 0 keeps twice as many.
    pub max_neighbors: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            max_neighbors: 16,
            ef_construction: 200,
            seed: 42,
        }
    }
}

/// Fusion weights for Stage-1 modality scores.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityWeights {
    /// `1 / |active modalities|` each.
    #[default]
    Uniform,
    Explicit(BTreeMap<Modality, f64>),
}

/// Every retrieval hyperparameter. Defaults are K=10, numCandidates=250,
/// M=12, N=80 with equal modality weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k_per_token: usize,
    pub num_candidates: usize,
    pub top_m: usize,
    pub shortlist_n: usize,
    pub modality_weights: ModalityWeights,
    pub fanout_concurrency: usize,
    pub precision_mode: PrecisionMode,
    pub ann_mode: AnnMode,
    pub graph: GraphParams,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_per_token: 10,
            num_candidates: 250,
            top_m: 12,
            shortlist_n: 80,
            modality_weights: ModalityWeights::Uniform,
            fanout_concurrency: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            precision_mode: PrecisionMode::Full32,
            ann_mode: AnnMode::ApproximateGraph,
            graph: GraphParams::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_per_token", self.k_per_token),
            ("num_candidates", self.num_candidates),
            ("top_m", self.top_m),
            ("shortlist_n", self.shortlist_n),
            ("fanout_concurrency", self.fanout_concurrency),
            ("graph.max_neighbors", self.graph.max_neighbors),
            ("graph.ef_construction", self.graph.ef_construction),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.num_candidates < self.k_per_token {
            return Err(Error::InvalidConfig(format!(
                "num_candidates ({}) must be >= k_per_token ({})",
                self.num_candidates, self.k_per_token
            )));
        }
        if let ModalityWeights::Explicit(weights) = &self.modality_weights {
            for (m, &w) in weights {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::InvalidConfig(format!(
                        "weight for {m} is {w}, must lie in [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Concrete weight per active modality; the weights must sum to 1.
    pub fn resolve_weights(&self, active: &[Modality]) -> Result<BTreeMap<Modality, f64>> {
        match &self.modality_weights {
            ModalityWeights::Uniform => {
                let w = 1.0 / active.len().max(1) as f64;
                Ok(active.iter().map(|&m| (m, w)).collect())
            }
            ModalityWeights::Explicit(weights) => {
                let mut out = BTreeMap::new();
                for &m in active {
                    let w = *weights.get(&m).ok_or(Error::MissingWeight(m))?;
                    out.insert(m, w);
                }
                check_weight_sum(&out)?;
                Ok(out)
            }
        }
    }
}

pub(crate) fn check_weight_sum(weights: &BTreeMap<Modality, f64>) -> Result<()> {
    let sum: f64 = weights.values().sum();
    if weights.is_empty() || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "active modality weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Which component produced a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    Oracle,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ScoredParent<S> {
    pub parent_id: String,
    pub score: S,
    pub stage: Stage,
}

/// Global result order: score descending, then parent id ascending.
pub fn ranking_order<S: Scalar>(a: &ScoredParent<S>, b: &ScoredParent<S>) -> Ordering {
    score_desc(a.score, b.score).then_with(|| a.parent_id.cmp(&b.parent_id))
}

pub fn sort_ranking<S: Scalar>(ranking: &mut [ScoredParent<S>]) {
    ranking.sort_by(ranking_order);
}

pub fn is_sorted_ranking<S: Scalar>(ranking: &[ScoredParent<S>]) -> bool {
    ranking
        .windows(2)
        .all(|w| ranking_order(&w[0], &w[1]) != Ordering::Greater)
}

/// Descending comparison; scores in this crate are always finite.
#[inline]
pub(crate) fn score_desc<S: Scalar>(a: S, b: S) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}
