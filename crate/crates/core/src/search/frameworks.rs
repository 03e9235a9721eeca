//! Retrieval frameworks over one knowledge base: MUST (one fused graph), MR
//! (one graph per modality, union then rerank) and JE (one graph over jointly
//! encoded vectors).

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use crate::catalog::{KnowledgeBase, ModalitySpec};
use crate::encoding::joint_encode;
use crate::error::{Error, Result};
use crate::fusion::{fuse_into, FusedLayout, WeightVector};
use crate::graph::{build_index, BuildParams, NavGraph};
use crate::vectors::VectorSet;

use super::{rank, search_with, Framework, Hit, SearchParams, SearchResult, SearchStats, SegmentedQuery};

/// Per-modality vectors and the graphs built over them.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    modalities: Vec<ModalitySpec>,
    layout: FusedLayout,
    weights: WeightVector,
    /// Unweighted concatenation of every object's modality vectors.
    raw: VectorSet,
    fused: VectorSet,
    must: Option<NavGraph>,
    mr: Option<Vec<(VectorSet, NavGraph)>>,
    je: Option<(VectorSet, NavGraph)>,
}

/// Pre-built pieces, e.g. loaded from disk.
#[derive(Debug, Clone)]
pub struct RetrievalIndexParts {
    pub modalities: Vec<ModalitySpec>,
    pub weights: WeightVector,
    pub raw: VectorSet,
    pub must: Option<NavGraph>,
    pub mr: Option<Vec<NavGraph>>,
    pub je: Option<NavGraph>,
}

fn fuse_rows(raw: &VectorSet, layout: &FusedLayout, weights: &WeightVector) -> VectorSet {
    let mut data = Vec::with_capacity(raw.as_flat().len());
    for row in raw.rows() {
        fuse_into(&layout.split(row), weights, &mut data);
    }
    VectorSet::from_flat(raw.dim(), data).expect("fusion preserves row width")
}

fn modality_rows(raw: &VectorSet, layout: &FusedLayout, m: usize) -> VectorSet {
    let seg = layout.segment(m);
    let mut out = VectorSet::with_capacity(seg.len(), raw.len());
    for row in raw.rows() {
        out.push(&row[seg.clone()]).expect("segment width is fixed");
    }
    out
}

fn joint_rows(raw: &VectorSet, layout: &FusedLayout) -> Result<VectorSet> {
    let width = layout.dims().into_iter().max().unwrap_or(0);
    let mut out = VectorSet::with_capacity(width, raw.len());
    for row in raw.rows() {
        out.push(&joint_encode(&layout.split(row))?)?;
    }
    Ok(out)
}

impl RetrievalIndex {
    /// Builds the requested framework indexes over an encoded knowledge base.
    pub fn build(
        kb: &KnowledgeBase,
        weights: WeightVector,
        params: &BuildParams,
        frameworks: &[Framework],
    ) -> Result<Self> {
        if !kb.is_encoded() {
            return Err(Error::IndexNotBuilt("knowledge base is not encoded".into()));
        }
        let width: usize = kb.dims().iter().sum();
        let mut raw = VectorSet::with_capacity(width, kb.len());
        let mut row = Vec::with_capacity(width);
        for object in &kb.objects {
            row.clear();
            let vectors = object.vectors.as_ref().expect("checked above");
            for m in &kb.modalities {
                row.extend_from_slice(&vectors[&m.name]);
            }
            raw.push(&row)?;
        }
        Self::from_vectors(kb.modalities.clone(), raw, weights, params, frameworks)
    }

    /// Builds from a raw matrix whose rows concatenate modality vectors in
    /// schema order.
    pub fn from_vectors(
        modalities: Vec<ModalitySpec>,
        raw: VectorSet,
        weights: WeightVector,
        params: &BuildParams,
        frameworks: &[Framework],
    ) -> Result<Self> {
        let mut index = Self::unbuilt(modalities, raw, weights)?;
        if index.raw.is_empty() {
            return Err(Error::EmptyCollection);
        }
        if frameworks.contains(&Framework::Must) {
            index.must = Some(build_index(&index.fused, params)?);
        }
        if frameworks.contains(&Framework::Mr) {
            let mut per = Vec::with_capacity(index.modalities.len());
            for m in 0..index.modalities.len() {
                let set = modality_rows(&index.raw, &index.layout, m);
                let graph = build_index(&set, params)?;
                per.push((set, graph));
            }
            index.mr = Some(per);
        }
        if frameworks.contains(&Framework::Je) {
            let set = joint_rows(&index.raw, &index.layout)?;
            let graph = build_index(&set, params)?;
            index.je = Some((set, graph));
        }
        Ok(index)
    }

    fn unbuilt(modalities: Vec<ModalitySpec>, raw: VectorSet, weights: WeightVector) -> Result<Self> {
        let dims: Vec<usize> = modalities.iter().map(|m| m.dimension).collect();
        let layout = FusedLayout::new(&dims);
        if raw.dim() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                actual: raw.dim(),
            });
        }
        if weights.len() != modalities.len() {
            return Err(Error::DimensionMismatch {
                expected: modalities.len(),
                actual: weights.len(),
            });
        }
        let fused = fuse_rows(&raw, &layout, &weights);
        Ok(Self {
            modalities,
            layout,
            weights,
            raw,
            fused,
            must: None,
            mr: None,
            je: None,
        })
    }

    pub fn from_parts(parts: RetrievalIndexParts) -> Result<Self> {
        let mut index = Self::unbuilt(parts.modalities, parts.raw, parts.weights)?;
        let n = index.raw.len();
        let check = |g: &NavGraph| -> Result<()> {
            if g.len() != n {
                return Err(Error::IndexNotBuilt(format!(
                    "graph has {} vertices for {n} objects",
                    g.len()
                )));
            }
            Ok(())
        };
        if let Some(g) = parts.must {
            check(&g)?;
            index.must = Some(g);
        }
        if let Some(graphs) = parts.mr {
            if graphs.len() != index.modalities.len() {
                return Err(Error::IndexNotBuilt(format!(
                    "{} MR graphs for {} modalities",
                    graphs.len(),
                    index.modalities.len()
                )));
            }
            let mut per = Vec::with_capacity(graphs.len());
            for (m, g) in graphs.into_iter().enumerate() {
                check(&g)?;
                per.push((modality_rows(&index.raw, &index.layout, m), g));
            }
            index.mr = Some(per);
        }
        if let Some(g) = parts.je {
            check(&g)?;
            index.je = Some((joint_rows(&index.raw, &index.layout)?, g));
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn modalities(&self) -> &[ModalitySpec] {
        &self.modalities
    }

    pub fn layout(&self) -> &FusedLayout {
        &self.layout
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn fused(&self) -> &VectorSet {
        &self.fused
    }

    pub fn raw(&self) -> &VectorSet {
        &self.raw
    }

    pub fn must_graph(&self) -> Option<&NavGraph> {
        self.must.as_ref()
    }

    pub fn mr_graphs(&self) -> Option<Vec<&NavGraph>> {
        self.mr.as_ref().map(|v| v.iter().map(|(_, g)| g).collect())
    }

    pub fn je_graph(&self) -> Option<&NavGraph> {
        self.je.as_ref().map(|(_, g)| g)
    }

    pub fn joint_vectors(&self) -> Option<&VectorSet> {
        self.je.as_ref().map(|(s, _)| s)
    }

    pub fn frameworks(&self) -> Vec<Framework> {
        let mut out = Vec::new();
        if self.must.is_some() {
            out.push(Framework::Must);
        }
        if self.mr.is_some() {
            out.push(Framework::Mr);
        }
        if self.je.is_some() {
            out.push(Framework::Je);
        }
        out
    }

    fn concat_query(&self, query: &[Vec<f32>]) -> Result<Vec<f32>> {
        if query.len() != self.modalities.len() {
            return Err(Error::DimensionMismatch {
                expected: self.modalities.len(),
                actual: query.len(),
            });
        }
        let mut out = Vec::with_capacity(self.layout.total_dim());
        for (v, m) in query.iter().zip(&self.modalities) {
            if v.len() != m.dimension {
                return Err(Error::DimensionMismatch {
                    expected: m.dimension,
                    actual: v.len(),
                });
            }
            out.extend_from_slice(v);
        }
        Ok(out)
    }

    /// The query as a point in the MUST graph's space.
    pub fn fused_query(&self, query: &[Vec<f32>]) -> Result<Vec<f32>> {
        self.concat_query(query)?;
        let mut fused = Vec::with_capacity(self.layout.total_dim());
        fuse_into(query, &self.weights, &mut fused);
        Ok(fused)
    }

    fn effective_weights<'a>(&'a self, params: &'a SearchParams) -> Result<&'a WeightVector> {
        match &params.weight_override {
            Some(w) if w.len() != self.weights.len() => Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: w.len(),
            }),
            Some(w) => Ok(w),
            None => Ok(&self.weights),
        }
    }

    /// Exact top-k under the weighted distance, by linear scan.
    pub fn exact_topk(&self, query: &[Vec<f32>], weights: &WeightVector, k: usize) -> Result<SearchResult> {
        let q = self.concat_query(query)?;
        let scales: Vec<f32> = weights.as_slice().iter().map(|w| *w as f32).collect();
        let oracle = SegmentedQuery {
            vectors: &self.raw,
            layout: &self.layout,
            query: &q,
            scales: Some(&scales),
        };
        let mut hits: Vec<Hit> = (0..self.raw.len() as u32)
            .map(|v| Hit {
                vertex: v,
                distance: super::DistanceOracle::eval(&oracle, v, f32::INFINITY).unwrap(),
            })
            .collect();
        hits.sort_by(|a, b| rank((a.distance, a.vertex), (b.distance, b.vertex)));
        hits.truncate(k);
        Ok(SearchResult {
            hits,
            stats: SearchStats {
                visited: self.raw.len(),
                full_evals: self.raw.len(),
                abandoned: 0,
            },
        })
    }

    pub fn search(&self, query: &[Vec<f32>], params: &SearchParams) -> Result<SearchResult> {
        match params.framework {
            Framework::Must => search_must(self, query, params),
            Framework::Mr => search_mr(self, query, params),
            Framework::Je => search_je(self, query, params),
        }
    }
}

/// Fuses the query with the index weights and runs one graph search. With a
/// weight override that differs from the index weights, the same graph is
/// navigated under the override-weighted distance instead.
pub fn search_must(index: &RetrievalIndex, query: &[Vec<f32>], params: &SearchParams) -> Result<SearchResult> {
    params.validate()?;
    let graph = index
        .must
        .as_ref()
        .ok_or_else(|| Error::IndexNotBuilt("MUST graph".into()))?;
    let weights = index.effective_weights(params)?;
    let raw_query = index.concat_query(query)?;
    if weights == &index.weights {
        let mut fused = Vec::with_capacity(raw_query.len());
        fuse_into(query, weights, &mut fused);
        let oracle = SegmentedQuery {
            vectors: &index.fused,
            layout: &index.layout,
            query: &fused,
            scales: None,
        };
        Ok(search_with(graph, &oracle, params.k, params.l, params.prune))
    } else {
        let scales: Vec<f32> = weights.as_slice().iter().map(|w| *w as f32).collect();
        let oracle = SegmentedQuery {
            vectors: &index.raw,
            layout: &index.layout,
            query: &raw_query,
            scales: Some(&scales),
        };
        Ok(search_with(graph, &oracle, params.k, params.l, params.prune))
    }
}

/// Searches every modality graph with the full beam, unions the pools and
/// reranks the union by the weighted distance.
pub fn search_mr(index: &RetrievalIndex, query: &[Vec<f32>], params: &SearchParams) -> Result<SearchResult> {
    params.validate()?;
    let per = index
        .mr
        .as_ref()
        .ok_or_else(|| Error::IndexNotBuilt("MR graphs".into()))?;
    let weights = index.effective_weights(params)?;
    let raw_query = index.concat_query(query)?;
    let mut stats = SearchStats::default();
    let mut union = BTreeSet::new();
    for (m, (set, graph)) in per.iter().enumerate() {
        let layout = FusedLayout::single(set.dim());
        let oracle = SegmentedQuery {
            vectors: set,
            layout: &layout,
            query: &query[m],
            scales: None,
        };
        let r = search_with(graph, &oracle, params.l, params.l, params.prune);
        stats += r.stats;
        union.extend(r.hits.iter().map(|h| h.vertex));
    }
    let scales: Vec<f32> = weights.as_slice().iter().map(|w| *w as f32).collect();
    let oracle = SegmentedQuery {
        vectors: &index.raw,
        layout: &index.layout,
        query: &raw_query,
        scales: Some(&scales),
    };
    let mut hits: Vec<Hit> = union
        .into_iter()
        .map(|v| Hit {
            vertex: v,
            distance: super::DistanceOracle::eval(&oracle, v, f32::INFINITY).unwrap(),
        })
        .collect();
    stats.full_evals += hits.len();
    hits.sort_by(|a, b| rank((a.distance, a.vertex), (b.distance, b.vertex)));
    hits.truncate(params.k);
    Ok(SearchResult { hits, stats })
}

/// Joint-encodes the query and searches the joint-space graph. Distances are
/// joint-space distances.
pub fn search_je(index: &RetrievalIndex, query: &[Vec<f32>], params: &SearchParams) -> Result<SearchResult> {
    params.validate()?;
    let (set, graph) = index
        .je
        .as_ref()
        .ok_or_else(|| Error::IndexNotBuilt("JE graph".into()))?;
    index.concat_query(query)?;
    let joint = joint_encode(query)?;
    let layout = FusedLayout::single(set.dim());
    let oracle = SegmentedQuery {
        vectors: set,
        layout: &layout,
        query: &joint,
        scales: None,
    };
    Ok(search_with(graph, &oracle, params.k, params.l, params.prune))
}

#[derive(Debug)]
pub struct FrameworkOutcome {
    pub framework: Framework,
    pub result: Result<SearchResult>,
    pub latency: Duration,
}

/// Runs MUST, MR and JE on the same query. A failing framework does not stop
/// the others.
pub fn compare_frameworks(index: &RetrievalIndex, query: &[Vec<f32>], params: &SearchParams) -> Vec<FrameworkOutcome> {
    Framework::ALL
        .iter()
        .map(|&framework| {
            let p = SearchParams {
                framework,
                ..params.clone()
            };
            let start = Instant::now();
            let result = index.search(query, &p);
            FrameworkOutcome {
                framework,
                result,
                latency: start.elapsed(),
            }
        })
        .collect()
}

/// Fraction of `truth` present in `got`.
pub fn recall_at_k(truth: &[u32], got: &[u32]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let found = truth.iter().filter(|t| got.contains(t)).count();
    found as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_modal(n: usize, seed: u64) -> (Vec<ModalitySpec>, VectorSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mods = vec![ModalitySpec::new("a", 6), ModalitySpec::new("b", 4)];
        let raw = VectorSet::from_flat(10, (0..n * 10).map(|_| rng.gen::<f32>()).collect()).unwrap();
        (mods, raw)
    }

    fn small_params() -> BuildParams {
        BuildParams {
            r: 12,
            l_build: 40,
            ..Default::default()
        }
    }

    #[test]
    fn missing_index_reported() {
        let (mods, raw) = two_modal(50, 1);
        let index =
            RetrievalIndex::from_vectors(mods, raw, WeightVector::uniform(2), &small_params(), &[Framework::Must])
                .unwrap();
        let q = vec![vec![0.5; 6], vec![0.5; 4]];
        assert!(search_must(&index, &q, &SearchParams::new(5, 10)).is_ok());
        assert!(matches!(search_mr(&index, &q, &SearchParams::new(5, 10)), Err(Error::IndexNotBuilt(_))));
        assert!(matches!(search_je(&index, &q, &SearchParams::new(5, 10)), Err(Error::IndexNotBuilt(_))));
        let outcomes = compare_frameworks(&index, &q, &SearchParams::new(5, 10));
        assert_eq!(outcomes.len(), 3);
        assert!(outcomes[0].result.is_ok() && outcomes[1].result.is_err());
    }

    #[test]
    fn mr_union_covers_each_modality_pool() {
        let (mods, raw) = two_modal(200, 2);
        let index = RetrievalIndex::from_vectors(
            mods,
            raw,
            WeightVector::new(vec![0.7, 0.3]).unwrap(),
            &small_params(),
            &[Framework::Mr],
        )
        .unwrap();
        let q = vec![vec![0.2; 6], vec![0.9; 4]];
        let params = SearchParams::new(200, 200);
        let mr = search_mr(&index, &q, &params).unwrap();
        let union: BTreeSet<u32> = mr.vertices().into_iter().collect();
        for (m, (set, graph)) in index.mr.as_ref().unwrap().iter().enumerate() {
            let layout = FusedLayout::single(set.dim());
            let oracle = SegmentedQuery { vectors: set, layout: &layout, query: &q[m], scales: None };
            let pool = search_with(graph, &oracle, 20, 20, true);
            for v in pool.vertices() {
                assert!(union.contains(&v));
            }
        }
    }

    #[test]
    fn weight_override_matches_exact_weighted_ranking() {
        let (mods, raw) = two_modal(300, 3);
        let index =
            RetrievalIndex::from_vectors(mods, raw, WeightVector::uniform(2), &small_params(), &[Framework::Must])
                .unwrap();
        let q = vec![vec![0.1; 6], vec![0.8; 4]];
        let w = WeightVector::new(vec![0.9, 0.1]).unwrap();
        let params = SearchParams {
            weight_override: Some(w.clone()),
            ..SearchParams::new(5, 100)
        };
        let got = search_must(&index, &q, &params).unwrap();
        let want = index.exact_topk(&q, &w, 5).unwrap();
        assert!(recall_at_k(&want.vertices(), &got.vertices()) >= 0.8);
        assert_eq!(got.hits[0].distance, want.hits[0].distance);
    }

    #[test]
    fn recall_definition() {
        assert_eq!(recall_at_k(&[1, 2, 3, 4], &[4, 9, 1, 7]), 0.5);
        assert_eq!(recall_at_k(&[], &[1]), 1.0);
    }
}
