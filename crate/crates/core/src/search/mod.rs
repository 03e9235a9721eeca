//! Top-k retrieval over a navigation graph.
//!
//! [`greedy_search`] is a best-first beam search. Distances to unvisited
//! neighbors are computed segment by segment ([`incremental_distance`]) and
//! abandoned as soon as the partial sum exceeds the current admission
//! threshold (the L-th best pool distance). Partial sums only grow, so an
//! abandoned vertex could never have entered the pool and the result list is
//! identical to a run with pruning disabled.

mod frameworks;

pub use frameworks::{
    compare_frameworks, recall_at_k, search_je, search_mr, search_must, FrameworkOutcome,
    RetrievalIndex, RetrievalIndexParts,
};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusedLayout, WeightVector};
use crate::graph::NavGraph;
use crate::vectors::{squared_l2, VectorSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    /// Merging-free search over the unified fused-vector graph.
    Must,
    /// One graph per modality; candidates unioned and reranked.
    Mr,
    /// One graph over jointly encoded vectors.
    Je,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Must, Framework::Mr, Framework::Je];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Must => "must",
            Self::Mr => "mr",
            Self::Je => "je",
        }
    }
}

impl std::str::FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "must" => Ok(Self::Must),
            "mr" => Ok(Self::Mr),
            "je" => Ok(Self::Je),
            other => Err(Error::InvalidParameter(format!("unknown framework {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub k: usize,
    /// Beam width.
    pub l: usize,
    pub framework: Framework,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_override: Option<WeightVector>,
    /// Incremental-scan abandonment; results are identical either way.
    pub prune: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 10,
            l: 100,
            framework: Framework::Must,
            weight_override: None,
            prune: true,
        }
    }
}

impl SearchParams {
    pub fn new(k: usize, l: usize) -> Self {
        Self {
            k,
            l,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.l < self.k {
            return Err(Error::InvalidParameter(format!(
                "beam width L={} is smaller than k={}",
                self.l, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub vertex: u32,
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Vertices expanded.
    pub visited: usize,
    /// Distance evaluations that ran over every segment.
    pub full_evals: usize,
    /// Distance evaluations cut short by the admission threshold.
    pub abandoned: usize,
}

impl std::ops::AddAssign for SearchStats {
    fn add_assign(&mut self, rhs: Self) {
        self.visited += rhs.visited;
        self.full_evals += rhs.full_evals;
        self.abandoned += rhs.abandoned;
    }
}

/// Ranked hits (distance ascending, ties by vertex id) plus counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub stats: SearchStats,
}

impl SearchResult {
    pub fn vertices(&self) -> Vec<u32> {
        self.hits.iter().map(|h| h.vertex).collect()
    }
}

#[inline]
fn rank(a: (f32, u32), b: (f32, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Outcome of one incremental distance evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eval {
    Full(f32),
    /// The partial sum passed the threshold after this many segments.
    Abandoned { segments: usize },
}

/// Squared distance accumulated segment by segment, abandoning once the
/// partial sum exceeds `tau`.
pub fn incremental_distance(q: &[f32], o: &[f32], layout: &FusedLayout, tau: f32) -> Result<Eval> {
    for v in [q, o] {
        if v.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                actual: v.len(),
            });
        }
    }
    let mut sum = 0.0f32;
    for m in 0..layout.segments() {
        let seg = layout.segment(m);
        sum += squared_l2(&q[seg.clone()], &o[seg]);
        if sum > tau {
            return Ok(Eval::Abandoned { segments: m + 1 });
        }
    }
    Ok(Eval::Full(sum))
}

/// Something the beam search can measure distances against.
pub trait DistanceOracle: Sync {
    fn len(&self) -> usize;

    /// Full distance to `vertex`, or `None` when it provably exceeds `tau`.
    fn eval(&self, vertex: u32, tau: f32) -> Option<f32>;
}

/// A query against a set of segmented vectors. Optional per-segment scales
/// multiply each segment's squared distance.
pub struct SegmentedQuery<'a> {
    pub vectors: &'a VectorSet,
    pub layout: &'a FusedLayout,
    pub query: &'a [f32],
    pub scales: Option<&'a [f32]>,
}

impl DistanceOracle for SegmentedQuery<'_> {
    fn len(&self) -> usize {
        self.vectors.len()
    }

    #[inline]
    fn eval(&self, vertex: u32, tau: f32) -> Option<f32> {
        let o = self.vectors.row(vertex as usize);
        let mut sum = 0.0f32;
        for m in 0..self.layout.segments() {
            let seg = self.layout.segment(m);
            let mut d = squared_l2(&self.query[seg.clone()], &o[seg]);
            if let Some(scales) = self.scales {
                d *= scales[m];
            }
            sum += d;
            if sum > tau {
                return None;
            }
        }
        Some(sum)
    }
}

/// Everything a beam search produced, for callers that need more than top-k.
#[derive(Debug, Clone)]
pub(crate) struct BeamOutcome {
    /// Final pool, best first.
    pub pool: Vec<Hit>,
    /// Expanded vertices with their distances, in expansion order.
    pub expanded: Vec<Hit>,
    pub stats: SearchStats,
}

struct PoolEntry {
    distance: f32,
    vertex: u32,
    expanded: bool,
}

pub(crate) fn beam_search<D: DistanceOracle + ?Sized>(
    graph: &NavGraph,
    oracle: &D,
    beam: usize,
    prune: bool,
) -> BeamOutcome {
    let n = oracle.len();
    let beam = beam.max(1);
    let mut stats = SearchStats::default();
    let mut seen = vec![false; n];
    let mut pool: Vec<PoolEntry> = Vec::with_capacity(beam + 1);
    let mut expanded = Vec::new();

    let entry = graph.entry();
    seen[entry as usize] = true;
    let d0 = oracle.eval(entry, f32::INFINITY).expect("infinite threshold never abandons");
    stats.full_evals += 1;
    pool.push(PoolEntry {
        distance: d0,
        vertex: entry,
        expanded: false,
    });

    // index of the first unexpanded pool entry
    let mut cursor = 0;
    while cursor < pool.len() {
        let current = pool[cursor].vertex;
        pool[cursor].expanded = true;
        expanded.push(Hit {
            vertex: current,
            distance: pool[cursor].distance,
        });
        stats.visited += 1;

        let mut lowest_insert = pool.len();
        for &nb in graph.neighbors(current) {
            if std::mem::replace(&mut seen[nb as usize], true) {
                continue;
            }
            let full = pool.len() >= beam;
            let tau = if prune && full {
                pool[beam - 1].distance
            } else {
                f32::INFINITY
            };
            let Some(d) = oracle.eval(nb, tau) else {
                stats.abandoned += 1;
                continue;
            };
            stats.full_evals += 1;
            if full && rank((d, nb), (pool[beam - 1].distance, pool[beam - 1].vertex)) != Ordering::Less {
                continue;
            }
            let at = pool.partition_point(|e| rank((e.distance, e.vertex), (d, nb)) == Ordering::Less);
            pool.insert(
                at,
                PoolEntry {
                    distance: d,
                    vertex: nb,
                    expanded: false,
                },
            );
            pool.truncate(beam);
            lowest_insert = lowest_insert.min(at);
        }
        cursor = lowest_insert.min(cursor + 1);
        while cursor < pool.len() && pool[cursor].expanded {
            cursor += 1;
        }
    }

    BeamOutcome {
        pool: pool
            .into_iter()
            .map(|e| Hit {
                vertex: e.vertex,
                distance: e.distance,
            })
            .collect(),
        expanded,
        stats,
    }
}

/// Best-first beam search from the graph's entry toward `query`, returning the
/// `k` nearest pool members. `layout` drives the incremental scan.
pub fn greedy_search(
    graph: &NavGraph,
    vectors: &VectorSet,
    layout: &FusedLayout,
    query: &[f32],
    params: &SearchParams,
) -> Result<SearchResult> {
    params.validate()?;
    check_query(vectors, layout, graph, query)?;
    let oracle = SegmentedQuery {
        vectors,
        layout,
        query,
        scales: None,
    };
    Ok(search_with(graph, &oracle, params.k, params.l, params.prune))
}

pub(crate) fn search_with<D: DistanceOracle + ?Sized>(
    graph: &NavGraph,
    oracle: &D,
    k: usize,
    l: usize,
    prune: bool,
) -> SearchResult {
    let mut outcome = beam_search(graph, oracle, l, prune);
    outcome.pool.truncate(k);
    SearchResult {
        hits: outcome.pool,
        stats: outcome.stats,
    }
}

pub(crate) fn check_query(vectors: &VectorSet, layout: &FusedLayout, graph: &NavGraph, query: &[f32]) -> Result<()> {
    if query.len() != vectors.dim() || layout.total_dim() != vectors.dim() {
        return Err(Error::DimensionMismatch {
            expected: vectors.dim(),
            actual: query.len(),
        });
    }
    if graph.len() != vectors.len() {
        return Err(Error::IndexNotBuilt(format!(
            "graph has {} vertices but {} vectors are loaded",
            graph.len(),
            vectors.len()
        )));
    }
    Ok(())
}

/// Exact top-k by full squared distance; same ordering rule as the graph search.
pub fn brute_force_topk(vectors: &VectorSet, query: &[f32], k: usize) -> Result<SearchResult> {
    if query.len() != vectors.dim() {
        return Err(Error::DimensionMismatch {
            expected: vectors.dim(),
            actual: query.len(),
        });
    }
    let mut all: Vec<Hit> = vectors
        .rows()
        .enumerate()
        .map(|(i, row)| Hit {
            vertex: i as u32,
            distance: squared_l2(query, row),
        })
        .collect();
    all.sort_by(|a, b| rank((a.distance, a.vertex), (b.distance, b.vertex)));
    all.truncate(k);
    Ok(SearchResult {
        hits: all,
        stats: SearchStats {
            visited: vectors.len(),
            full_evals: vectors.len(),
            abandoned: 0,
        },
    })
}
