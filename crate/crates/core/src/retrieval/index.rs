use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::encoder::score;
use crate::{CategoryId, Error, ItemId, Result};

/// A retrieved item with its temperature-scaled cosine score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: ItemId,
    pub score: f64,
}

/// Score descending, then item id ascending.
pub fn rank_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { max_degree: 16, ef_construction: 200, ef_search: 128 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Exact,
    Graph(GraphParams),
}

/// Single-layer bounded-degree proximity graph over the index's vectors.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Graph {
    pub(crate) params: GraphParams,
    pub(crate) entry: u32,
    pub(crate) neighbors: Vec<Vec<u32>>,
}

/// Item vectors of one category (or of the whole catalog when `category` is `None`).
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryIndex {
    pub(crate) category: Option<CategoryId>,
    pub(crate) dim: usize,
    pub(crate) temperature: f64,
    pub(crate) ids: Vec<ItemId>,
    pub(crate) vectors: Vec<f32>,
    pub(crate) graph: Option<Graph>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cand(f32, u32);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    // Higher similarity first; lower index breaks ties.
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

fn sim(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CategoryIndex {
    /// `vectors` is `ids.len() x dim`, row-major, unit norm.
    pub fn build(
        category: Option<CategoryId>,
        ids: Vec<ItemId>,
        vectors: Vec<f32>,
        dim: usize,
        temperature: f64,
        backend: Backend,
    ) -> Result<Self> {
        if dim == 0 || vectors.len() != ids.len() * dim {
            return Err(Error::Shape(format!("{} vectors of width {dim} for {} ids", vectors.len(), ids.len())));
        }
        let mut index = Self { category, dim, temperature, ids, vectors, graph: None };
        if let Backend::Graph(p) = backend {
            if p.max_degree == 0 || p.ef_construction == 0 || p.ef_search == 0 {
                return Err(Error::Config("graph parameters must be at least 1".into()));
            }
            index.graph = Some(index.build_graph(p));
        }
        Ok(index)
    }

    pub fn category(&self) -> Option<CategoryId> {
        self.category
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn vector(&self, local: usize) -> &[f32] {
        &self.vectors[local * self.dim..(local + 1) * self.dim]
    }

    pub fn backend(&self) -> Backend {
        self.graph.as_ref().map_or(Backend::Exact, |g| Backend::Graph(g.params))
    }

    /// Top-`k` items by score, descending, ties by ascending item id.
    pub fn query(&self, user: &[f32], k: usize) -> Vec<ScoredItem> {
        if self.ids.is_empty() || k == 0 {
            return Vec::new();
        }
        match &self.graph {
            None => self.query_exact(user, k),
            Some(g) => {
                let ef = g.params.ef_search.max(k);
                let found = self.search(g, user, g.entry, ef, None);
                let mut out: Vec<ScoredItem> = found.into_iter().map(|c| self.scored(user, c.1 as usize)).collect();
                out.sort_by(rank_order);
                out.truncate(k);
                out
            }
        }
    }

    fn scored(&self, user: &[f32], local: usize) -> ScoredItem {
        ScoredItem { item_id: self.ids[local], score: score(user, self.vector(local), self.temperature) }
    }

    fn query_exact(&self, user: &[f32], k: usize) -> Vec<ScoredItem> {
        let mut all: Vec<ScoredItem> = (0..self.ids.len()).map(|i| self.scored(user, i)).collect();
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all.sort_by(rank_order);
        all
    }

    /// Best-first beam search. With `limit`, only nodes `< limit` exist.
    fn search(&self, g: &Graph, q: &[f32], entry: u32, ef: usize, limit: Option<usize>) -> Vec<Cand> {
        let n = limit.unwrap_or(self.ids.len());
        let mut visited = vec![false; n];
        let first = Cand(sim(q, self.vector(entry as usize)), entry);
        visited[entry as usize] = true;
        let mut frontier = BinaryHeap::from([first]);
        let mut best: BinaryHeap<Reverse<Cand>> = BinaryHeap::from([Reverse(first)]);
        while let Some(c) = frontier.pop() {
            let worst = best.peek().expect("non-empty").0;
            if best.len() >= ef && c < worst {
                break;
            }
            for &nb in &g.neighbors[c.1 as usize] {
                let nb_idx = nb as usize;
                if nb_idx >= n || visited[nb_idx] {
                    continue;
                }
                visited[nb_idx] = true;
                let cand = Cand(sim(q, self.vector(nb_idx)), nb);
                if best.len() < ef || cand > best.peek().expect("non-empty").0 {
                    frontier.push(cand);
                    best.push(Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity-aware neighbor choice: a candidate is kept only if it is
    /// closer to the base than to every neighbor already kept; the list is then
    /// topped up with the closest rejected candidates.
    fn select_neighbors(&self, cands: &[Cand], m: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        let mut rejected = Vec::new();
        for c in cands {
            if kept.len() >= m {
                break;
            }
            let v = self.vector(c.1 as usize);
            if kept.iter().all(|&r| sim(v, self.vector(r as usize)) < c.0) {
                kept.push(c.1);
            } else {
                rejected.push(c.1);
            }
        }
        for r in rejected {
            if kept.len() >= m {
                break;
            }
            kept.push(r);
        }
        kept
    }

    fn build_graph(&self, params: GraphParams) -> Graph {
        let n = self.ids.len();
        let mut g = Graph { params, entry: 0, neighbors: vec![Vec::new(); n] };
        for i in 1..n {
            let q = self.vector(i);
            let cands = self.search(&g, q, g.entry, params.ef_construction, Some(i));
            let chosen = self.select_neighbors(&cands, params.max_degree);
            for &nb in &chosen {
                let list = &mut g.neighbors[nb as usize];
                list.push(i as u32);
                if list.len() > params.max_degree {
                    let base = self.vector(nb as usize);
                    let mut cs: Vec<Cand> =
                        list.iter().map(|&x| Cand(sim(base, self.vector(x as usize)), x)).collect();
                    cs.sort_by(|a, b| b.cmp(a));
                    g.neighbors[nb as usize] = self.select_neighbors(&cs, params.max_degree);
                }
            }
            g.neighbors[i] = chosen;
        }
        if n > 0 {
            let mut centroid = vec![0f32; self.dim];
            for i in 0..n {
                centroid.iter_mut().zip(self.vector(i)).for_each(|(c, v)| *c += v);
            }
            g.entry = (0..n)
                .map(|i| Cand(sim(&centroid, self.vector(i)), i as u32))
                .max()
                .map_or(0, |c| c.1);
        }
        g
    }
}
