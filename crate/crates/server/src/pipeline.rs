//! The configure pipeline (ingest, encode, weights, index) and the engine it
//! produces. Shared by the service and the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use mqa_core::catalog::{self, load_vectors, save_vectors, save_weights};
use mqa_core::encoding::{encode_knowledge_base, encode_query};
use mqa_core::fusion::{learn_weights, load_triplets};
use mqa_core::graph::{load_graph, save_graph};
use mqa_core::search::{RetrievalIndexParts, SearchStats};
use mqa_core::{
    EncoderRegistry, Framework, KnowledgeBase, NavGraph, QueryContext, SearchParams, SearchResult, VectorSet,
    WeightVector,
};
use serde::Serialize;

use crate::config::{SystemConfig, WeightsMode};
use crate::error::ServiceError;
use crate::status::StageId;

pub use mqa_core::search::RetrievalIndex;

pub const VECTORS_FILE: &str = "vectors.mqav";
pub const WEIGHTS_FILE: &str = "weights.json";

/// Progress callback: a stage started, or finished with detail lines.
pub enum Progress {
    Running(StageId),
    Done(StageId, Vec<String>),
}

/// A stage that failed, with the error that stopped it.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: StageId,
    pub error: ServiceError,
}

/// Everything a retrieval query needs, immutable once built.
#[derive(Debug)]
pub struct Engine {
    pub config: SystemConfig,
    pub kb: KnowledgeBase,
    pub registry: EncoderRegistry,
    pub index: RetrievalIndex,
}

/// One ranked result as returned to clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedObject {
    pub rank: usize,
    pub id: String,
    pub distance: f32,
    /// Modalities with a raw payload available for display.
    pub modalities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub framework: Framework,
    pub results: Vec<RankedObject>,
    pub stats: SearchStats,
}

pub fn registry_for(config: &SystemConfig) -> Result<EncoderRegistry, ServiceError> {
    let kb = &config.knowledge_base;
    let registry = EncoderRegistry::new(&kb.modalities, config.encoder_specs())?;
    Ok(registry.with_roles(kb.text_modality.as_deref(), kb.image_modality.as_deref())?)
}

pub fn ingest_kb(config: &SystemConfig) -> Result<KnowledgeBase, ServiceError> {
    let kb = &config.knowledge_base;
    let manifest = kb
        .manifest
        .as_ref()
        .ok_or_else(|| ServiceError::invalid_request("knowledge_base.manifest is not set"))?;
    Ok(catalog::ingest(manifest, &kb.name, kb.modalities.clone())?)
}

/// Encodes every object, or loads the vectors from the artifact directory
/// when it holds a vectors file for exactly these ids.
pub fn encode_kb(config: &SystemConfig, kb: &mut KnowledgeBase, registry: &EncoderRegistry) -> Result<bool, ServiceError> {
    if let Some(dir) = &config.index.artifacts {
        let path = dir.join(VECTORS_FILE);
        if path.exists() {
            let stored = load_vectors(&path)?;
            let ids_match = stored.ids.len() == kb.len() && stored.ids.iter().zip(&kb.objects).all(|(a, o)| *a == o.id);
            if !ids_match || stored.dims != kb.dims() {
                return Err(ServiceError::invalid_request(format!(
                    "{} does not match the knowledge base",
                    path.display()
                )));
            }
            let maps = (0..stored.ids.len())
                .map(|i| {
                    kb.modalities
                        .iter()
                        .zip(stored.object_vectors(i))
                        .map(|(m, v)| (m.name.clone(), v.to_vec()))
                        .collect()
                })
                .collect();
            kb.set_vectors(maps)?;
            return Ok(true);
        }
    }
    encode_knowledge_base(kb, registry)?;
    Ok(false)
}

pub fn resolve_weights(config: &SystemConfig) -> Result<WeightVector, ServiceError> {
    let m = config.knowledge_base.modalities.len();
    Ok(match &config.weights {
        WeightsMode::Uniform => WeightVector::uniform(m),
        WeightsMode::Manual { values } => WeightVector::new(values.clone())?,
        WeightsMode::Learned { triplets, learn } => {
            let triplets = load_triplets(triplets, &config.knowledge_base.modalities)?;
            learn_weights(&triplets, learn)?
        }
    })
}

fn graph_files(modalities: &[String], framework: Framework) -> Vec<String> {
    match framework {
        Framework::Must => vec!["must.mqag".into()],
        Framework::Mr => modalities.iter().map(|m| format!("mr.{m}.mqag")).collect(),
        Framework::Je => vec!["je.mqag".into()],
    }
}

/// Builds the requested indexes, or loads them when an artifact directory
/// holds graphs saved under the same weights.
pub fn build_or_load_index(
    config: &SystemConfig,
    kb: &KnowledgeBase,
    weights: WeightVector,
) -> Result<(RetrievalIndex, bool), ServiceError> {
    if let Some(dir) = &config.index.artifacts {
        if let Some(index) = load_index(dir, kb, &weights, &config.index.frameworks)? {
            return Ok((index, true));
        }
    }
    let index = RetrievalIndex::build(kb, weights, &config.index.build, &config.index.frameworks)?;
    Ok((index, false))
}

fn load_index(
    dir: &Path,
    kb: &KnowledgeBase,
    weights: &WeightVector,
    frameworks: &[Framework],
) -> Result<Option<RetrievalIndex>, ServiceError> {
    let names = kb.modality_names();
    let wanted = frameworks.iter().flat_map(|f| graph_files(&names, *f));
    if !dir.join(WEIGHTS_FILE).exists() || wanted.into_iter().any(|f| !dir.join(f).exists()) {
        return Ok(None);
    }
    let (saved_names, saved) = catalog::load_weights(dir.join(WEIGHTS_FILE))?;
    if saved_names != names || saved != *weights {
        return Err(ServiceError::invalid_request(format!(
            "graphs in {} were built under different weights",
            dir.display()
        )));
    }
    let load = |f: &str| -> Result<NavGraph, ServiceError> {
        let g = load_graph(dir.join(f))?;
        if g.len() != kb.len() {
            return Err(ServiceError::invalid_request(format!("{f} has {} vertices, expected {}", g.len(), kb.len())));
        }
        Ok(g)
    };
    let has = |f: Framework| frameworks.contains(&f);
    let must = has(Framework::Must).then(|| load("must.mqag")).transpose()?;
    let mr = has(Framework::Mr)
        .then(|| graph_files(&names, Framework::Mr).iter().map(|f| load(f)).collect::<Result<Vec<_>, _>>())
        .transpose()?;
    let je = has(Framework::Je).then(|| load("je.mqag")).transpose()?;
    let index = RetrievalIndex::from_parts(RetrievalIndexParts {
        modalities: kb.modalities.clone(),
        weights: weights.clone(),
        raw: raw_matrix(kb)?,
        must,
        mr,
        je,
    })?;
    Ok(Some(index))
}

fn raw_matrix(kb: &KnowledgeBase) -> Result<VectorSet, ServiceError> {
    let width = kb.dims().iter().sum();
    let mut raw = VectorSet::with_capacity(width, kb.len());
    let mut row = Vec::with_capacity(width);
    for v in 0..kb.len() as u32 {
        row.clear();
        for m in &kb.modalities {
            row.extend_from_slice(kb.stored_vector(v, &m.name)?);
        }
        raw.push(&row)?;
    }
    Ok(raw)
}

/// Writes vectors, weights and every built graph into `dir`. Returns the
/// written paths.
pub fn save_artifacts(engine: &Engine, dir: &Path) -> Result<Vec<PathBuf>, ServiceError> {
    fs::create_dir_all(dir).map_err(|e| ServiceError::Internal(format!("{}: {e}", dir.display())))?;
    let names = engine.kb.modality_names();
    let mut written = Vec::new();
    let path = dir.join(VECTORS_FILE);
    save_vectors(&engine.kb, &path)?;
    written.push(path);
    let path = dir.join(WEIGHTS_FILE);
    save_weights(&path, &names, engine.index.weights())?;
    written.push(path);
    let mut save = |file: String, graph: &NavGraph| -> Result<(), ServiceError> {
        let path = dir.join(file);
        save_graph(graph, &path)?;
        written.push(path);
        Ok(())
    };
    if let Some(g) = engine.index.must_graph() {
        save("must.mqag".into(), g)?;
    }
    if let Some(graphs) = engine.index.mr_graphs() {
        for (file, g) in graph_files(&names, Framework::Mr).into_iter().zip(graphs) {
            save(file, g)?;
        }
    }
    if let Some(g) = engine.index.je_graph() {
        save("je.mqag".into(), g)?;
    }
    Ok(written)
}

fn fmt_weights(names: &[String], w: &WeightVector) -> String {
    names
        .iter()
        .zip(w.as_slice())
        .map(|(n, w)| format!("{n}={w:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Runs ingest → encode → weights → index. Stops at the first failing stage.
pub fn run(config: &SystemConfig, progress: &mut dyn FnMut(Progress)) -> Result<Engine, StageFailure> {
    let fail = |stage| move |error| StageFailure { stage, error };

    let stage = StageId::DataPreprocessing;
    progress(Progress::Running(stage));
    let mut kb = ingest_kb(config).map_err(fail(stage))?;
    let report = kb.report();
    let mut details = vec![
        format!("knowledge base: {}", kb.name),
        format!("objects: {}", report.objects),
    ];
    details.extend(report.coverage.iter().map(|(m, n)| format!("modality {m}: {n} objects")));
    progress(Progress::Done(stage, details));

    let stage = StageId::VectorRepresentation;
    progress(Progress::Running(stage));
    let registry = registry_for(config).map_err(fail(stage))?;
    let loaded = encode_kb(config, &mut kb, &registry).map_err(fail(stage))?;
    let weights = resolve_weights(config).map_err(fail(stage))?;
    let mut details: Vec<String> = registry
        .specs()
        .map(|s| format!("encoder {}: {}, {} dims", s.modality, s.kind.as_str(), s.dimension))
        .collect();
    if loaded {
        details.push("vectors loaded from artifacts".into());
    }
    details.push(format!(
        "fused dimension: {}",
        kb.dims().iter().sum::<usize>()
    ));
    details.push(format!("weights ({}): {}", config.weights.name(), fmt_weights(&kb.modality_names(), &weights)));
    progress(Progress::Done(stage, details));

    let stage = StageId::IndexConstruction;
    progress(Progress::Running(stage));
    let (index, loaded) = build_or_load_index(config, &kb, weights).map_err(fail(stage))?;
    let b = &config.index.build;
    let mut details = vec![format!(
        "index type: navigation graph (R={}, L_build={}, alpha={}, passes={})",
        b.r, b.l_build, b.alpha, b.passes
    )];
    details.push(format!(
        "frameworks: {}",
        index.frameworks().iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
    ));
    if let Some(g) = index.must_graph() {
        details.push(format!("must graph: {} vertices, {} edges", g.len(), g.edge_count()));
    }
    if loaded {
        details.push("graphs loaded from artifacts".into());
    }
    progress(Progress::Done(stage, details));

    Ok(Engine {
        config: config.clone(),
        kb,
        registry,
        index,
    })
}

impl Engine {
    pub fn build(config: &SystemConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        run(config, &mut |_| {}).map_err(|f| f.error)
    }

    pub fn encode(&self, query: &QueryContext) -> Result<Vec<Vec<f32>>, ServiceError> {
        Ok(encode_query(&self.kb, query, &self.registry)?)
    }

    /// Retrieval defaults from the config with per-request overrides applied.
    pub fn params(
        &self,
        k: Option<usize>,
        l: Option<usize>,
        framework: Option<Framework>,
        weights: Option<Vec<f64>>,
    ) -> Result<SearchParams, ServiceError> {
        let mut p = self.config.retrieval.clone();
        if let Some(k) = k {
            p.k = k;
            p.l = p.l.max(k);
        }
        if let Some(l) = l {
            p.l = l;
        }
        if let Some(f) = framework {
            p.framework = f;
        }
        if let Some(w) = weights {
            p.weight_override = Some(WeightVector::new(w)?);
        }
        p.validate()?;
        if !self.index.frameworks().contains(&p.framework) {
            return Err(ServiceError::invalid_request(format!(
                "framework {} was not built",
                p.framework.as_str()
            )));
        }
        Ok(p)
    }

    pub fn search(&self, query: &[Vec<f32>], params: &SearchParams) -> Result<Retrieval, ServiceError> {
        let result = self.index.search(query, params)?;
        Ok(self.retrieval(params.framework, &result))
    }

    pub fn retrieval(&self, framework: Framework, result: &SearchResult) -> Retrieval {
        Retrieval {
            framework,
            results: self.ranked(result),
            stats: result.stats,
        }
    }

    pub fn ranked(&self, result: &SearchResult) -> Vec<RankedObject> {
        result
            .hits
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let object = &self.kb.objects[h.vertex as usize];
                RankedObject {
                    rank: i + 1,
                    id: object.id.clone(),
                    distance: h.distance,
                    modalities: object.payloads.keys().cloned().collect(),
                }
            })
            .collect()
    }
}
