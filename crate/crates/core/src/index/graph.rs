//! Hierarchical navigable small-world graph over packed vectors, with
//! similarity = dot product (larger is closer).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{dot_slice, GraphParams};
use crate::scalar::Scalar;

const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Near<S> {
    sim: S,
    id: u32,
}

impl<S: Scalar> PartialEq for Near<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Near<S> {}

impl<S: Scalar> PartialOrd for Near<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Near<S> {
    /// Higher similarity is greater; on ties the lower id is greater.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .partial_cmp(&other.sim)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Graph {
    params: GraphParams,
    entry: Option<u32>,
    top_level: usize,
    /// links[node][level] for every level the node lives on
    links: Vec<Vec<Vec<u32>>>,
}

/// Reusable visited set with O(1) reset.
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `id` is seen since the last reset.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

impl Graph {
    pub(crate) fn build<S: Scalar>(vectors: &[S], dim: usize, params: GraphParams) -> Self {
        let n = vectors.len().checked_div(dim).unwrap_or(0);
        let mut graph = Graph {
            params,
            entry: None,
            top_level: 0,
            links: Vec::with_capacity(n),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.max_neighbors.max(2) as f64).ln();
        let mut visited = Visited::new(n);
        for id in 0..n as u32 {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let level = ((-u.ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            graph.insert(vectors, dim, id, level, &mut visited);
        }
        graph
    }

    fn capacity(&self, level: usize) -> usize {
        if level == 0 {
            self.params.max_neighbors * 2
        } else {
            self.params.max_neighbors
        }
    }

    fn insert<S: Scalar>(
        &mut self,
        vectors: &[S],
        dim: usize,
        id: u32,
        level: usize,
        visited: &mut Visited,
    ) {
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(id);
            self.top_level = level;
            return;
        };
        let row = |i: u32| &vectors[i as usize * dim..(i as usize + 1) * dim];
        let query = row(id);

        let mut ep = entry;
        for lc in (level + 1..=self.top_level).rev() {
            ep = self.greedy(vectors, dim, query, ep, lc);
        }

        let mut entries = vec![ep];
        for lc in (0..=level.min(self.top_level)).rev() {
            let found = self.search_layer(
                vectors,
                dim,
                query,
                &entries,
                self.params.ef_construction,
                lc,
                visited,
                |_| true,
            );
            let cap = self.capacity(lc);
            let chosen = select_neighbors(vectors, dim, &found, cap);
            for &nb in &chosen {
                let list = &mut self.links[nb as usize][lc];
                list.push(id);
                if list.len() > cap {
                    let base = row(nb);
                    let mut scored: Vec<Near<S>> = list
                        .iter()
                        .map(|&x| Near {
                            sim: dot_slice(base, row(x)),
                            id: x,
                        })
                        .collect();
                    scored.sort_by(|a, b| b.cmp(a));
                    let pruned = select_neighbors(vectors, dim, &scored, cap);
                    self.links[nb as usize][lc] = pruned;
                }
            }
            self.links[id as usize][lc] = chosen;
            entries = found.iter().map(|c| c.id).collect();
        }

        if level > self.top_level {
            self.top_level = level;
            self.entry = Some(id);
        }
    }

    fn greedy<S: Scalar>(&self, vectors: &[S], dim: usize, query: &[S], start: u32, level: usize) -> u32 {
        let row = |i: u32| &vectors[i as usize * dim..(i as usize + 1) * dim];
        let mut best = Near {
            sim: dot_slice(query, row(start)),
            id: start,
        };
        loop {
            let mut improved = false;
            for &nb in &self.links[best.id as usize][level] {
                let cand = Near {
                    sim: dot_slice(query, row(nb)),
                    id: nb,
                };
                if cand > best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best.id;
            }
        }
    }

    /// Beam search on one layer. Every reached node may be expanded, but only
    /// nodes passing `accept` enter the result beam of width `ef`. Returns the
    /// accepted nodes, best first.
    #[allow(clippy::too_many_arguments)]
    fn search_layer<S: Scalar>(
        &self,
        vectors: &[S],
        dim: usize,
        query: &[S],
        entries: &[u32],
        ef: usize,
        level: usize,
        visited: &mut Visited,
        accept: impl Fn(u32) -> bool,
    ) -> Vec<Near<S>> {
        let row = |i: u32| &vectors[i as usize * dim..(i as usize + 1) * dim];
        visited.reset();
        let mut candidates: BinaryHeap<Near<S>> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Near<S>>> = BinaryHeap::new();
        for &e in entries {
            if !visited.insert(e) {
                continue;
            }
            let near = Near {
                sim: dot_slice(query, row(e)),
                id: e,
            };
            candidates.push(near);
            if accept(e) {
                results.push(Reverse(near));
                if results.len() > ef {
                    results.pop();
                }
            }
        }

        while let Some(current) = candidates.pop() {
            if results.len() >= ef {
                if let Some(Reverse(worst)) = results.peek() {
                    if current < *worst {
                        break;
                    }
                }
            }
            for &nb in &self.links[current.id as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let near = Near {
                    sim: dot_slice(query, row(nb)),
                    id: nb,
                };
                let worth = results.len() < ef
                    || results.peek().is_some_and(|Reverse(worst)| near > *worst);
                if worth {
                    candidates.push(near);
                    if accept(nb) {
                        results.push(Reverse(near));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }

        let mut out: Vec<Near<S>> = results.into_iter().map(|Reverse(n)| n).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Top `ef` accepted nodes for `query` as `(similarity, node)`, best first.
    pub(crate) fn search<S: Scalar>(
        &self,
        vectors: &[S],
        dim: usize,
        query: &[S],
        ef: usize,
        accept: impl Fn(u32) -> bool,
    ) -> Vec<(S, u32)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut ep = entry;
        for lc in (1..=self.top_level).rev() {
            ep = self.greedy(vectors, dim, query, ep, lc);
        }
        let mut visited = Visited::new(self.links.len());
        self.search_layer(vectors, dim, query, &[ep], ef, 0, &mut visited, accept)
            .into_iter()
            .map(|n| (n.sim, n.id))
            .collect()
    }

    pub(crate) fn len(&self) -> usize {
        self.links.len()
    }

    #[cfg(test)]
    pub(crate) fn max_degree(&self, level: usize) -> usize {
        self.links
            .iter()
            .filter_map(|l| l.get(level).map(Vec::len))
            .max()
            .unwrap_or(0)
    }
}

/// Diversity heuristic: keep a candidate only if it is closer to the base
/// than to every neighbor already kept, then top up with the best of the
/// discarded ones. `candidates` must be sorted best first.
fn select_neighbors<S: Scalar>(vectors: &[S], dim: usize, candidates: &[Near<S>], cap: usize) -> Vec<u32> {
    let row = |i: u32| &vectors[i as usize * dim..(i as usize + 1) * dim];
    let mut kept: Vec<u32> = Vec::with_capacity(cap);
    let mut discarded = Vec::new();
    for c in candidates {
        if kept.len() >= cap {
            break;
        }
        let diverse = kept
            .iter()
            .all(|&k| dot_slice(row(c.id), row(k)) < c.sim);
        if diverse {
            kept.push(c.id);
        } else {
            discarded.push(c.id);
        }
    }
    for d in discarded {
        if kept.len() >= cap {
            break;
        }
        kept.push(d);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            out.extend(v.iter().map(|x| x / norm));
        }
        out
    }

    fn brute(vectors: &[f32], dim: usize, q: &[f32], k: usize) -> Vec<u32> {
        let mut all: Vec<Near<f32>> = (0..vectors.len() / dim)
            .map(|i| Near {
                sim: dot_slice(q, &vectors[i * dim..(i + 1) * dim]),
                id: i as u32,
            })
            .collect();
        all.sort_by(|a, b| b.cmp(a));
        all.truncate(k);
        all.into_iter().map(|n| n.id).collect()
    }

    #[test]
    fn degree_bounded_and_recall_reasonable() {
        let dim = 16;
        let n = 2000;
        let vectors = random_unit(n, dim, 1);
        let graph = Graph::build(&vectors, dim, GraphParams::default());
        assert_eq!(graph.len(), n);
        assert!(graph.max_degree(0) <= 32);
        assert!(graph.max_degree(1) <= 16);

        let queries = random_unit(50, dim, 2);
        let mut hits = 0;
        for q in queries.chunks(dim) {
            let truth = brute(&vectors, dim, q, 10);
            let found: Vec<u32> = graph
                .search(&vectors, dim, q, 100, |_| true)
                .into_iter()
                .take(10)
                .map(|(_, id)| id)
                .collect();
            hits += truth.iter().filter(|t| found.contains(t)).count();
        }
        let recall = hits as f64 / 500.0;
        assert!(recall > 0.9, "recall {recall}");
    }

    #[test]
    fn filtered_search_only_returns_accepted() {
        let dim = 8;
        let vectors = random_unit(500, dim, 3);
        let graph = Graph::build(&vectors, dim, GraphParams::default());
        let q = &random_unit(1, dim, 4)[..];
        let found = graph.search(&vectors, dim, q, 20, |id| id % 7 == 0);
        assert_eq!(found.len(), 20);
        assert!(found.iter().all(|(_, id)| id % 7 == 0));
        assert!(found.windows(2).all(|w| w[0].0 >= w[1].0));
    }

    #[test]
    fn same_seed_same_graph() {
        let dim = 8;
        let vectors = random_unit(300, dim, 5);
        let a = Graph::build(&vectors, dim, GraphParams::default());
        let b = Graph::build(&vectors, dim, GraphParams::default());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_graph_search() {
        let g = Graph::build::<f32>(&[], 4, GraphParams::default());
        assert!(g.search::<f32>(&[], 4, &[1.0, 0.0, 0.0, 0.0], 5, |_| true).is_empty());
    }
}
