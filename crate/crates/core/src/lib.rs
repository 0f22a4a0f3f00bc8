//! Two-stage late-interaction retrieval over corpora of parents made of
//! many child embeddings.
//!
//! Stage 1 fans each query token out to an approximate nearest-neighbour
//! search, keeps the best child similarity per parent and token, sums the
//! top `M` of those per modality, robust-normalizes and fuses modalities,
//! and returns a shortlist. Stage 2 rescores the shortlist with exact
//! MaxSim. [`eval::oracle_rank`] scores every parent exactly for reference.
//!
//! The core is generic over [`Scalar`] (`f32` or `f64`). The unsuffixed
//! aliases below fix it to `f32`.

pub mod error;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod model;
mod pool;
pub mod scalar;
pub mod stage1;
pub mod stage2;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{evaluate_run, ndcg_at_k, oracle_rank, recall_at_n, EvalOptions, MetricTable};
pub use index::{build_index, ChildHit, FilterSpec};
pub use ingest::Qrels;
pub use model::{
    AnnMode, Modality, ModalityWeights, ParentKind, PrecisionMode, RetrievalConfig, Stage,
};
pub use scalar::Scalar;
pub use stage1::stage1_run;
pub use stage2::{exact_maxsim, rerank};

pub type Vector = model::Vector<f32>;
pub type ChildEmbedding = model::ChildEmbedding<f32>;
pub type QueryEmbedding = model::QueryEmbedding<f32>;
pub type ScoredParent = model::ScoredParent<f32>;
pub type Corpus = ingest::Corpus<f32>;
pub type Index = index::Index<f32>;

pub type Vector64 = model::Vector<f64>;
pub type ChildEmbedding64 = model::ChildEmbedding<f64>;
pub type QueryEmbedding64 = model::QueryEmbedding<f64>;
pub type ScoredParent64 = model::ScoredParent<f64>;
pub type Corpus64 = ingest::Corpus<f64>;
pub type Index64 = index::Index<f64>;
