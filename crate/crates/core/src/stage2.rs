//! Exact MaxSim re-ranking.
//!
//! `MaxSim(Q, d) = Σ_i max_j ⟨q_i, d_j⟩` over every query token and every
//! child of `d`, all modalities included. Shortlisted parents with similar
//! child counts are scored together from one zero-padded `[B, rows, dim]`
//! buffer; the rest go through the per-parent kernel. Both kernels visit
//! tokens in order and children in ascending id order, so they agree
//! bit-for-bit.

use std::collections::{BTreeMap, HashSet};

use half::f16;

use crate::error::{Error, Result};
use crate::index::{ChildMatrix, Index};
use crate::model::{dot_slice, sort_ranking, PrecisionMode, QueryEmbedding, RetrievalConfig, ScoredParent, Stage};
use crate::pool::bounded_map;
use crate::scalar::Scalar;

/// Largest number of parents packed into one padded batch.
const MAX_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct RerankResult<S> {
    pub ranking: Vec<ScoredParent<S>>,
    /// Per-token maxima for each parent, when requested.
    pub per_parent_token_maxima: Option<BTreeMap<String, Vec<S>>>,
    /// Query-token × child similarities evaluated.
    pub similarity_count: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RerankOptions {
    pub keep_token_maxima: bool,
    /// Score every parent on its own instead of in padded batches.
    pub disable_batching: bool,
}

fn check_shapes<S: Scalar>(query: &QueryEmbedding<S>, children: &ChildMatrix<'_, S>) -> Result<()> {
    if children.is_empty() {
        return Err(Error::EmptyChildren);
    }
    if children.dim() != query.dim() {
        return Err(Error::DimensionMismatch {
            expected: query.dim(),
            found: children.dim(),
            locator: "child matrix".into(),
        });
    }
    Ok(())
}

/// `max_j ⟨q_i, d_j⟩` for each token `i`.
fn token_maxima<T: Scalar>(tokens: &[&[T]], dim: usize, rows: usize, data: &[T]) -> Vec<T> {
    tokens
        .iter()
        .map(|q| {
            let mut best = T::neg_infinity();
            for j in 0..rows {
                let s = dot_slice(q, &data[j * dim..(j + 1) * dim]);
                if s > best {
                    best = s;
                }
            }
            best
        })
        .collect()
}

/// Zero-padded stack of child matrices.
struct PaddedBatch<T> {
    dim: usize,
    stride_rows: usize,
    rows: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> PaddedBatch<T> {
    fn pack<'a>(dim: usize, parents: impl Iterator<Item = &'a [T]> + Clone) -> Self {
        let rows: Vec<usize> = parents.clone().map(|d| d.len() / dim).collect();
        let stride_rows = rows.iter().copied().max().unwrap_or(0);
        let mut data = vec![T::zero(); rows.len() * stride_rows * dim];
        for (b, d) in parents.enumerate() {
            let start = b * stride_rows * dim;
            data[start..start + d.len()].copy_from_slice(d);
        }
        PaddedBatch {
            dim,
            stride_rows,
            rows,
            data,
        }
    }

    /// Token-major sweep over the whole batch; padded rows are masked out.
    fn token_maxima(&self, tokens: &[&[T]]) -> Vec<Vec<T>> {
        let dim = self.dim;
        let mut out = vec![vec![T::neg_infinity(); tokens.len()]; self.rows.len()];
        for (i, q) in tokens.iter().enumerate() {
            for (b, &valid) in self.rows.iter().enumerate() {
                let base = b * self.stride_rows * dim;
                let mut best = T::neg_infinity();
                for j in 0..valid {
                    let start = base + j * dim;
                    let s = dot_slice(q, &self.data[start..start + dim]);
                    if s > best {
                        best = s;
                    }
                }
                out[b][i] = best;
            }
        }
        out
    }
}

fn sum_in_order<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

/// Exact MaxSim of one parent.
pub fn exact_maxsim<S: Scalar>(query: &QueryEmbedding<S>, children: &ChildMatrix<'_, S>) -> Result<S> {
    check_shapes(query, children)?;
    let tokens: Vec<&[S]> = query.tokens().iter().map(|t| t.as_slice()).collect();
    Ok(sum_in_order(&token_maxima(
        &tokens,
        children.dim(),
        children.rows(),
        children.data(),
    )))
}

fn round_half<S: Scalar>(values: &[S]) -> Vec<f32> {
    values
        .iter()
        .map(|&v| f16::from_f32(v.to_storage()).to_f32())
        .collect()
}

/// MaxSim with inputs rounded to 16-bit floats and 32-bit accumulation.
pub fn exact_maxsim_reduced<S: Scalar>(
    query: &QueryEmbedding<S>,
    children: &ChildMatrix<'_, S>,
) -> Result<S> {
    check_shapes(query, children)?;
    let rounded: Vec<Vec<f32>> = query.tokens().iter().map(|t| round_half(t.as_slice())).collect();
    let tokens: Vec<&[f32]> = rounded.iter().map(Vec::as_slice).collect();
    let data = round_half(children.data());
    let maxima = token_maxima(&tokens, children.dim(), children.rows(), &data);
    Ok(S::from_storage(sum_in_order(&maxima)))
}

/// Re-scores `shortlist` with exact MaxSim.
pub fn rerank<S: Scalar>(
    index: &Index<S>,
    query: &QueryEmbedding<S>,
    shortlist: &[ScoredParent<S>],
    config: &RetrievalConfig,
) -> Result<RerankResult<S>> {
    rerank_with(index, query, shortlist, config, RerankOptions::default())
}

/// Groups positions (into `sizes`) so that each group's largest child count
/// stays within 25% (+1) of its smallest.
fn plan_batches(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (sizes[i], i));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if g.len() < MAX_BATCH && sizes[i] <= sizes[g[0]] + sizes[g[0]] / 4 + 1 => {
                g.push(i)
            }
            _ => groups.push(vec![i]),
        }
    }
    groups
}

pub fn rerank_with<S: Scalar>(
    index: &Index<S>,
    query: &QueryEmbedding<S>,
    shortlist: &[ScoredParent<S>],
    config: &RetrievalConfig,
    options: RerankOptions,
) -> Result<RerankResult<S>> {
    if query.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: query.dim(),
            locator: format!("query {}", query.query_id),
        });
    }
    let mut seen = HashSet::new();
    let mut positions = Vec::with_capacity(shortlist.len());
    for s in shortlist {
        let pos = index
            .corpus()
            .parent_position(&s.parent_id)
            .ok_or_else(|| Error::UnknownParent(s.parent_id.clone()))?;
        if seen.insert(pos) {
            positions.push(pos);
        }
    }
    let matrices: Vec<ChildMatrix<'_, S>> =
        positions.iter().map(|&p| index.children_at(p, None)).collect();
    let similarity_count: u64 = matrices
        .iter()
        .map(|m| (m.rows() * query.len()) as u64)
        .sum();

    let maxima: Vec<Vec<S>> = match config.precision_mode {
        PrecisionMode::Full32 => {
            let tokens: Vec<&[S]> = query.tokens().iter().map(|t| t.as_slice()).collect();
            let data: Vec<&[S]> = matrices.iter().map(|m| m.data()).collect();
            score_all(&tokens, index.dim(), &data, config.fanout_concurrency, options)
        }
        PrecisionMode::Mixed16 => {
            let rounded: Vec<Vec<f32>> =
                query.tokens().iter().map(|t| round_half(t.as_slice())).collect();
            let tokens: Vec<&[f32]> = rounded.iter().map(Vec::as_slice).collect();
            let owned: Vec<Vec<f32>> = matrices.iter().map(|m| round_half(m.data())).collect();
            let data: Vec<&[f32]> = owned.iter().map(Vec::as_slice).collect();
            score_all(&tokens, index.dim(), &data, config.fanout_concurrency, options)
                .into_iter()
                .map(|m| m.into_iter().map(S::from_storage).collect())
                .collect()
        }
    };

    let parents = index.corpus().parents();
    let mut ranking: Vec<ScoredParent<S>> = positions
        .iter()
        .zip(&maxima)
        .map(|(&p, m)| ScoredParent {
            parent_id: parents[p].parent_id.clone(),
            score: match config.precision_mode {
                PrecisionMode::Full32 => sum_in_order(m),
                PrecisionMode::Mixed16 => {
                    let m32: Vec<f32> = m.iter().map(|v| v.to_storage()).collect();
                    S::from_storage(sum_in_order(&m32))
                }
            },
            stage: Stage::Stage2,
        })
        .collect();
    sort_ranking(&mut ranking);

    let per_parent_token_maxima = options.keep_token_maxima.then(|| {
        positions
            .iter()
            .zip(maxima)
            .map(|(&p, m)| (parents[p].parent_id.clone(), m))
            .collect()
    });

    Ok(RerankResult {
        ranking,
        per_parent_token_maxima,
        similarity_count,
    })
}

/// Token maxima for every parent, in input order.
fn score_all<T: Scalar>(
    tokens: &[&[T]],
    dim: usize,
    parents: &[&[T]],
    threads: usize,
    options: RerankOptions,
) -> Vec<Vec<T>> {
    let groups = if options.disable_batching {
        (0..parents.len()).map(|i| vec![i]).collect()
    } else {
        plan_batches(&parents.iter().map(|d| d.len() / dim).collect::<Vec<_>>())
    };
    let scored = bounded_map(threads, &groups, |group| {
        if group.len() == 1 {
            let d = parents[group[0]];
            vec![token_maxima(tokens, dim, d.len() / dim, d)]
        } else {
            PaddedBatch::pack(dim, group.iter().map(|&i| parents[i])).token_maxima(tokens)
        }
    });
    let mut out = vec![Vec::new(); parents.len()];
    for (group, maxima) in groups.iter().zip(scored) {
        for (&i, m) in group.iter().zip(maxima) {
            out[i] = m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vector;

    fn q(tokens: &[&[f32]]) -> QueryEmbedding<f32> {
        QueryEmbedding::new("q", tokens.iter().map(|t| Vector::new(t.to_vec())).collect()).unwrap()
    }

    fn m(rows: &[&[f32]]) -> ChildMatrix<'static, f32> {
        let rows: Vec<Vector<f32>> = rows.iter().map(|r| Vector::new(r.to_vec())).collect();
        ChildMatrix::from_rows(rows[0].dim(), &rows)
    }

    #[test]
    fn maxsim_hand_example() {
        let query = q(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let score = exact_maxsim(&query, &m(&[&[1.0, 0.0], &[0.6, 0.8]])).unwrap();
        assert!((score - 1.8).abs() < 1e-6);
        let reduced = exact_maxsim_reduced(&query, &m(&[&[1.0, 0.0], &[0.6, 0.8]])).unwrap();
        assert!((reduced - 1.8).abs() < 0.01);
    }

    #[test]
    fn self_similarity_and_duplicates() {
        let query = q(&[&[0.6, 0.8]]);
        assert_eq!(exact_maxsim(&query, &m(&[&[0.6, 0.8]])).unwrap(), 0.6 * 0.6 + 0.8 * 0.8);
        let once = exact_maxsim(&query, &m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let dup = exact_maxsim(&query, &m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(once, dup);
    }

    #[test]
    fn reduced_exact_on_representable_inputs() {
        let query = q(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let children = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            exact_maxsim_reduced(&query, &children).unwrap(),
            exact_maxsim(&query, &children).unwrap()
        );
    }

    #[test]
    fn empty_and_mismatched_children() {
        let query = q(&[&[1.0, 0.0]]);
        let empty = ChildMatrix::<f32>::from_rows(2, &[]);
        assert!(matches!(exact_maxsim(&query, &empty), Err(Error::EmptyChildren)));
        assert!(matches!(
            exact_maxsim(&query, &m(&[&[1.0, 0.0, 0.0]])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_plan_groups_similar_sizes() {
        let groups = plan_batches(&[10, 40, 11, 12, 41, 3]);
        assert_eq!(groups, vec![vec![5], vec![0, 2, 3], vec![1, 4]]);
        let many: Vec<usize> = vec![5; 70];
        assert!(plan_batches(&many).iter().all(|g| g.len() <= MAX_BATCH));
    }

    #[test]
    fn padded_batch_matches_per_parent() {
        let tokens: Vec<&[f64]> = vec![&[1.0, 0.0], &[0.0, 1.0]];
        let p0 = [0.6, 0.8, 1.0, 0.0];
        let p1 = [0.0, 1.0];
        let batch = PaddedBatch::pack(2, [&p0[..], &p1[..]].into_iter());
        let batched = batch.token_maxima(&tokens);
        assert_eq!(batched[0], token_maxima(&tokens, 2, 2, &p0));
        assert_eq!(batched[1], token_maxima(&tokens, 2, 1, &p1));
    }
}
