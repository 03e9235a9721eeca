//! Unified navigation graph over fused vectors.
//!
//! Construction runs five replaceable stages:
//!
//! 1. [`init_graph`]: seeded random out-edges;
//! 2. [`acquire_candidates`]: beam search from the entry toward each vertex;
//! 3. [`select_neighbors`]: α-robust pruning of the candidates, in rounds of
//!    increasing slack;
//! 4. [`add_reverse_edges`]: back-edges, re-pruning any vertex that overflows;
//! 5. [`finalize_entry_and_repair`]: medoid entry and reachability repair.
//!
//! Stages 2–4 repeat once per pass; the first pass prunes with α = 1.

mod persist;
mod validate;

pub use persist::{load_graph, save_graph};
pub use validate::{ValidationReport, Violation};

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedLayout;
use crate::search::{beam_search, Hit, SegmentedQuery};
use crate::vectors::{squared_l2, VectorSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    /// Maximum out-degree.
    pub r: usize,
    /// Beam width used while acquiring candidates.
    pub l_build: usize,
    /// Pruning slack of the final pass.
    pub alpha: f32,
    pub passes: usize,
    pub seed: u64,
    /// Vertices whose candidates are computed against the same graph snapshot.
    /// Larger batches parallelize stages 2–3; 1 is fully sequential.
    pub batch_size: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            r: 32,
            l_build: 100,
            alpha: 1.2,
            passes: 2,
            seed: 0x5eed,
            batch_size: 1,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if self.r < 2 {
            return fail(format!("R={} must be at least 2", self.r));
        }
        if self.l_build < self.r {
            return fail(format!("L_build={} must be at least R={}", self.l_build, self.r));
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return fail(format!("alpha={} must be a finite value >= 1", self.alpha));
        }
        if self.passes == 0 {
            return fail("at least one build pass is required".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// Bounded-degree directed proximity graph with a fixed entry vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavGraph {
    adjacency: Vec<Vec<u32>>,
    entry: u32,
    r: usize,
}

impl NavGraph {
    pub fn from_parts(adjacency: Vec<Vec<u32>>, entry: u32, r: usize) -> Self {
        Self { adjacency, entry, r }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn max_degree(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adjacency[v as usize]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }
}

/// Stage 1: every vertex gets `min(r, n - 1)` distinct uniformly random
/// out-neighbors drawn from one seeded stream.
pub fn init_graph(n: usize, r: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = r.min(n.saturating_sub(1));
    (0..n)
        .map(|v| {
            sample(&mut rng, n - 1, degree)
                .into_iter()
                .map(|i| if i >= v { i + 1 } else { i } as u32)
                .collect()
        })
        .collect()
}

/// Stage 2: beam search from `entry` toward vertex `p`. Returns the expanded
/// vertices other than `p` with their distances to `p`.
pub fn acquire_candidates(
    graph: &NavGraph,
    vectors: &VectorSet,
    p: u32,
    l_build: usize,
) -> Vec<Hit> {
    let layout = FusedLayout::single(vectors.dim());
    let oracle = SegmentedQuery {
        vectors,
        layout: &layout,
        query: vectors.row(p as usize),
        scales: None,
    };
    beam_search(graph, &oracle, l_build, true)
        .expanded
        .into_iter()
        .filter(|h| h.vertex != p)
        .collect()
}

/// Stage 3: α-robust prune with graded slack. A remaining candidate `c'` is
/// dropped by a kept `c` once `a · d(c, c') <= d(p, c')`. The scan runs first
/// with `a = 1`, then again with `a` raised by 1.2× per round up to `alpha`,
/// each round keeping the nearest candidates no kept vertex has dropped yet.
/// Stops at `r` kept. With `alpha = 1` this is a single plain robust prune.
/// Ties go to the smaller vertex id.
pub fn select_neighbors(
    p: u32,
    candidates: &[Hit],
    vectors: &VectorSet,
    alpha: f32,
    r: usize,
) -> Vec<u32> {
    let mut pool: Vec<Hit> = candidates.iter().copied().filter(|h| h.vertex != p).collect();
    pool.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.vertex.cmp(&b.vertex)));
    pool.dedup_by_key(|h| h.vertex);

    // Largest d(p, c') / d(c, c') over kept c; infinite once kept.
    let mut occlusion = vec![0.0f32; pool.len()];
    let mut kept = Vec::with_capacity(r);
    let mut slack = 1.0f32;
    loop {
        for i in 0..pool.len() {
            if kept.len() >= r {
                return kept;
            }
            if occlusion[i] >= slack {
                continue;
            }
            occlusion[i] = f32::INFINITY;
            kept.push(pool[i].vertex);
            let cv = vectors.row(pool[i].vertex as usize);
            for j in i + 1..pool.len() {
                if occlusion[j] >= alpha {
                    continue;
                }
                let d = squared_l2(cv, vectors.row(pool[j].vertex as usize));
                let ratio = if d == 0.0 { f32::INFINITY } else { pool[j].distance / d };
                occlusion[j] = occlusion[j].max(ratio);
            }
        }
        if slack >= alpha {
            return kept;
        }
        slack = (slack * 1.2).min(alpha);
    }
}

fn with_distances(p: u32, ids: &[u32], vectors: &VectorSet) -> Vec<Hit> {
    let pv = vectors.row(p as usize);
    ids.iter()
        .map(|&v| Hit {
            vertex: v,
            distance: squared_l2(pv, vectors.row(v as usize)),
        })
        .collect()
}

/// Stage 4: adds `c → p` for every selected `c`, re-pruning `c` when its
/// out-degree exceeds `r`.
pub fn add_reverse_edges(
    adjacency: &mut [Vec<u32>],
    p: u32,
    selected: &[u32],
    vectors: &VectorSet,
    alpha: f32,
    r: usize,
) {
    for &c in selected {
        let list = &mut adjacency[c as usize];
        if list.contains(&p) {
            continue;
        }
        list.push(p);
        if list.len() > r {
            let candidates = with_distances(c, list, vectors);
            *list = select_neighbors(c, &candidates, vectors, alpha, r);
        }
    }
}

/// Vertex closest to the centroid; ties go to the smaller id.
pub fn medoid(vectors: &VectorSet) -> u32 {
    let dim = vectors.dim();
    let mut centroid = vec![0.0f64; dim];
    for row in vectors.rows() {
        for (c, x) in centroid.iter_mut().zip(row) {
            *c += *x as f64;
        }
    }
    let n = vectors.len().max(1) as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    let mut best = (f64::INFINITY, 0u32);
    for (i, row) in vectors.rows().enumerate() {
        let d: f64 = row
            .iter()
            .zip(&centroid)
            .map(|(x, c)| (*x as f64 - c).powi(2))
            .sum();
        if d < best.0 {
            best = (d, i as u32);
        }
    }
    best.1
}

fn reachable_from(adjacency: &[Vec<u32>], start: u32, seen: &mut [bool]) {
    let mut queue = VecDeque::new();
    if !std::mem::replace(&mut seen[start as usize], true) {
        queue.push_back(start);
    }
    while let Some(v) = queue.pop_front() {
        for &u in &adjacency[v as usize] {
            if !std::mem::replace(&mut seen[u as usize], true) {
                queue.push_back(u);
            }
        }
    }
}

/// Stage 5: sets the entry to the medoid, then makes every vertex reachable.
/// Unreachable vertices are visited in ascending id order; each gets an edge
/// from its nearest reachable vertex, which may push that vertex past `r`.
/// Returns the graph and the number of repair edges added.
pub fn finalize_entry_and_repair(
    mut adjacency: Vec<Vec<u32>>,
    vectors: &VectorSet,
    r: usize,
) -> (NavGraph, usize) {
    let entry = medoid(vectors);
    let n = adjacency.len();
    let mut seen = vec![false; n];
    reachable_from(&adjacency, entry, &mut seen);
    let mut repairs = 0;
    for u in 0..n as u32 {
        if seen[u as usize] {
            continue;
        }
        let uv = vectors.row(u as usize);
        let (_, from) = (0..n as u32)
            .filter(|&v| seen[v as usize])
            .map(|v| (squared_l2(uv, vectors.row(v as usize)), v))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("the entry is always reachable");
        adjacency[from as usize].push(u);
        repairs += 1;
        reachable_from(&adjacency, u, &mut seen);
    }
    if repairs > 0 {
        log::debug!("reachability repair added {repairs} edges");
    }
    (NavGraph { adjacency, entry, r }, repairs)
}

/// Builds the graph. Deterministic for identical vectors and parameters,
/// regardless of thread count.
pub fn build_index(vectors: &VectorSet, params: &BuildParams) -> Result<NavGraph> {
    params.validate()?;
    let n = vectors.len();
    if n == 0 {
        return Err(Error::EmptyCollection);
    }
    let r = params.r;
    let mut adjacency = init_graph(n, r, params.seed);
    // search from the medoid while building, the same vertex stage 5 picks
    let entry = medoid(vectors);

    for pass in 0..params.passes {
        let alpha = if pass == 0 && params.passes > 1 { 1.0 } else { params.alpha };
        let mut start = 0;
        while start < n {
            let end = (start + params.batch_size).min(n);
            let snapshot = NavGraph {
                adjacency,
                entry,
                r,
            };
            let select = |p: u32| {
                let mut candidates = acquire_candidates(&snapshot, vectors, p, params.l_build);
                candidates.extend(with_distances(p, snapshot.neighbors(p), vectors));
                select_neighbors(p, &candidates, vectors, alpha, r)
            };
            let selections: Vec<(u32, Vec<u32>)> = if end - start == 1 {
                vec![(start as u32, select(start as u32))]
            } else {
                (start as u32..end as u32)
                    .into_par_iter()
                    .map(|p| (p, select(p)))
                    .collect()
            };
            let before: Vec<Vec<u32>> = (start..end).map(|p| snapshot.adjacency[p].clone()).collect();
            adjacency = snapshot.adjacency;

            // commit in vertex-id order
            for ((p, mut selected), old) in selections.into_iter().zip(before) {
                let current = &adjacency[p as usize];
                let added: Vec<u32> = current.iter().copied().filter(|v| !old.contains(v)).collect();
                if !added.is_empty() {
                    // keep back-edges that earlier commits in this batch added to p
                    let mut ids = selected.clone();
                    ids.extend(added.iter().filter(|v| !selected.contains(v)));
                    selected = select_neighbors(p, &with_distances(p, &ids, vectors), vectors, alpha, r);
                }
                adjacency[p as usize] = selected.clone();
                add_reverse_edges(&mut adjacency, p, &selected, vectors, alpha, r);
            }
            start = end;
        }
    }

    let (graph, _) = finalize_entry_and_repair(adjacency, vectors, r);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_set(n: usize, dim: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorSet::from_flat(dim, (0..n * dim).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(BuildParams::default().validate().is_ok());
        for bad in [
            BuildParams { r: 1, ..Default::default() },
            BuildParams { l_build: 10, ..Default::default() },
            BuildParams { alpha: 0.9, ..Default::default() },
            BuildParams { alpha: f32::NAN, ..Default::default() },
            BuildParams { passes: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn init_graph_cases() {
        assert_eq!(init_graph(1, 4, 0), vec![Vec::<u32>::new()]);
        let g = init_graph(3, 5, 0);
        for (v, list) in g.iter().enumerate() {
            let mut sorted = list.clone();
            sorted.sort();
            let others: Vec<u32> = (0..3).filter(|&u| u != v as u32).collect();
            assert_eq!(sorted, others);
        }
        let a = init_graph(200, 8, 42);
        assert_eq!(a, init_graph(200, 8, 42));
        assert_ne!(a, init_graph(200, 8, 43));
        for (v, list) in a.iter().enumerate() {
            assert_eq!(list.len(), 8);
            assert!(!list.contains(&(v as u32)));
            let mut d = list.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 8);
        }
    }

    #[test]
    fn empty_and_single() {
        assert!(matches!(
            build_index(&VectorSet::new(4), &BuildParams::default()),
            Err(Error::EmptyCollection)
        ));
        let g = build_index(&random_set(1, 4, 0), &BuildParams::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.entry(), 0);
    }

    #[test]
    fn tiny_graph_is_valid() {
        let vectors = random_set(5, 3, 9);
        let params = BuildParams { r: 4, l_build: 10, ..Default::default() };
        let g = build_index(&vectors, &params).unwrap();
        let report = g.validate();
        assert!(report.is_valid(), "{report:?}");
        assert!(g.adjacency().iter().all(|l| l.len() <= 4));
    }

    #[test]
    fn two_vertices_candidates() {
        let vectors = random_set(2, 3, 1);
        let g = NavGraph::from_parts(vec![vec![1], vec![0]], 0, 2);
        for p in 0..2u32 {
            let c = acquire_candidates(&g, &vectors, p, 10);
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].vertex, 1 - p);
        }
    }

    #[test]
    fn select_single_candidate() {
        let vectors = random_set(2, 3, 1);
        let c = [Hit { vertex: 1, distance: squared_l2(vectors.row(0), vectors.row(1)) }];
        assert_eq!(select_neighbors(0, &c, &vectors, 1.2, 4), vec![1]);
    }

    #[test]
    fn select_collinear() {
        // p, a, b at 0, 1, 2: d(p,a)=1, d(a,b)=1, d(p,b)=4 (squared)
        let vectors = VectorSet::from_flat(1, vec![0.0, 1.0, 2.0]).unwrap();
        let c = [Hit { vertex: 2, distance: 4.0 }, Hit { vertex: 1, distance: 1.0 }];
        assert_eq!(select_neighbors(0, &c, &vectors, 1.0, 4), vec![1]);
    }

    #[test]
    fn reverse_edges_respect_degree() {
        let vectors = random_set(10, 4, 5);
        let r = 3;
        let mut adj: Vec<Vec<u32>> = vec![vec![]; 10];
        adj[1] = vec![2, 3];
        add_reverse_edges(&mut adj, 0, &[1], &vectors, 1.2, r);
        assert_eq!(adj[1], vec![2, 3, 0]);
        adj[4] = vec![5, 6, 7];
        add_reverse_edges(&mut adj, 0, &[4], &vectors, 1.2, r);
        assert!(adj[4].len() <= r);
        // re-adding an existing edge is a no-op
        add_reverse_edges(&mut adj, 0, &[1], &vectors, 1.2, r);
        assert_eq!(adj[1], vec![2, 3, 0]);
    }

    #[test]
    fn repair_connects_stray_cluster() {
        let mut data = Vec::new();
        for i in 0..4 {
            data.extend([i as f32 * 0.1, 0.0]);
        }
        for i in 0..3 {
            data.extend([10.0 + i as f32 * 0.1, 0.0]);
        }
        let vectors = VectorSet::from_flat(2, data).unwrap();
        // two cliques with no edges between them
        let mut adj = vec![vec![]; 7];
        for a in 0..4u32 {
            adj[a as usize] = (0..4).filter(|&b| b != a).collect();
        }
        for a in 4..7u32 {
            adj[a as usize] = (4..7).filter(|&b| b != a).collect();
        }
        let (g, repairs) = finalize_entry_and_repair(adj.clone(), &vectors, 3);
        assert_eq!(repairs, 1);
        assert!(g.validate().is_valid());
        assert_eq!(g.edge_count(), adj.iter().map(Vec::len).sum::<usize>() + 1);

        // fully connected already: only the entry changes
        let full: Vec<Vec<u32>> = (0..7u32).map(|a| (0..7).filter(|&b| b != a).collect()).collect();
        let (g, repairs) = finalize_entry_and_repair(full.clone(), &vectors, 6);
        assert_eq!(repairs, 0);
        assert_eq!(g.adjacency(), &full[..]);
        assert_eq!(g.entry(), medoid(&vectors));
    }

    #[test]
    fn batched_build_is_deterministic() {
        let vectors = random_set(400, 8, 11);
        let params = BuildParams { r: 12, l_build: 30, batch_size: 16, ..Default::default() };
        let a = build_index(&vectors, &params).unwrap();
        let b = build_index(&vectors, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_valid());
    }
}
