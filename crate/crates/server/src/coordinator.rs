//! The single mediation point between clients and the retrieval components.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use mqa_core::catalog::ModalityPayload;
use mqa_core::search::{compare_frameworks, recall_at_k, SearchStats};
use mqa_core::{Framework, QueryContext};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::ServiceError;
use crate::llm::{template_answer, LlmClient};
use crate::pipeline::{self, Engine, Progress, RankedObject};
use crate::session::{Session, Turn, TurnQuery};
use crate::status::{Milestones, StageId, StageState, SystemMode};

/// One query turn's inputs plus optional retrieval overrides.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryRequest {
    pub text: Option<String>,
    /// Raw image bytes (the HTTP layer decodes base64 or multipart).
    #[serde(skip)]
    pub image: Option<Vec<u8>>,
    pub selected_id: Option<String>,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub framework: Option<Framework>,
    pub weights: Option<Vec<f64>>,
}

impl QueryRequest {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()).filter(|t: &String| !t.trim().is_empty()),
            ..Self::default()
        }
    }

    pub fn with_selected(mut self, id: impl Into<String>) -> Self {
        self.selected_id = Some(id.into());
        self
    }

    fn is_empty(&self) -> bool {
        self.text.is_none() && self.image.is_none() && self.selected_id.is_none()
    }

    /// The query as shown to the LLM and in template answers.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(t) = &self.text {
            parts.push(t.clone());
        }
        if self.image.is_some() {
            parts.push("[uploaded image]".into());
        }
        if let Some(id) = &self.selected_id {
            parts.push(format!("[selected {id}]"));
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub session_id: String,
    pub turn: usize,
    pub answer: String,
    /// The LLM failed and the answer is the template rendering.
    pub degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub framework: Option<Framework>,
    pub results: Vec<RankedObject>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<SearchStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameworkReport {
    pub framework: Framework,
    pub results: Vec<RankedObject>,
    pub stats: SearchStats,
    pub latency_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareResponse {
    pub k: usize,
    pub l: usize,
    pub frameworks: Vec<FrameworkReport>,
    /// Exact top-k under the index weights (or the override).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<RankedObject>>,
}

#[derive(Debug)]
pub struct Payload {
    pub bytes: Vec<u8>,
    pub content_type: &'static str,
}

struct Active {
    engine: Option<Engine>,
    llm: LlmClient,
}

#[derive(Default)]
pub struct Coordinator {
    active: RwLock<Option<Arc<Active>>>,
    status: Mutex<Milestones>,
    configuring: AtomicBool,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Coordinator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_status(&self) -> Milestones {
        lock(&self.status).clone()
    }

    fn update_status(&self, f: impl FnOnce(&mut Milestones)) {
        f(&mut lock(&self.status));
    }

    /// Validates, then runs the pipeline. Queries are rejected while this
    /// runs; queries already in flight finish first. A failing stage is
    /// reported in the returned milestones, not as an error.
    pub fn configure(&self, config: SystemConfig) -> Result<Milestones, ServiceError> {
        config.validate()?;
        if self.configuring.swap(true, Ordering::SeqCst) {
            return Err(ServiceError::Reconfiguring);
        }
        struct Release<'a>(&'a AtomicBool);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                self.0.store(false, Ordering::SeqCst);
            }
        }
        let _release = Release(&self.configuring);

        // waits for in-flight queries, which hold read guards
        *self.active.write().unwrap_or_else(|e| e.into_inner()) = None;
        self.update_status(|m| {
            *m = Milestones {
                mode: SystemMode::Configuring,
                ..Milestones::default()
            }
        });

        let llm = LlmClient::new(config.llm.clone());
        let retrieval_detail = format!(
            "retrieval framework: {} (k={}, L={})",
            config.retrieval.framework.as_str(),
            config.retrieval.k,
            config.retrieval.l
        );

        if !config.knowledge_base.ingest_enabled {
            self.update_status(|m| {
                for s in [StageId::DataPreprocessing, StageId::VectorRepresentation, StageId::IndexConstruction] {
                    m.push_detail(s, "skipped: knowledge ingestion disabled");
                }
                m.details = vec!["mode: LLM only".into(), llm.describe()];
                m.mode = SystemMode::LlmOnly;
            });
            log::info!("configured {:?} in LLM-only mode", config.knowledge_base.name);
            *self.active.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(Active { engine: None, llm }));
            return Ok(self.get_status());
        }

        let outcome = pipeline::run(&config, &mut |p| match p {
            Progress::Running(stage) => self.update_status(|m| {
                m.advance(stage, StageState::Running);
            }),
            Progress::Done(stage, details) => self.update_status(|m| {
                for d in details {
                    m.push_detail(stage, d);
                }
                m.advance(stage, StageState::Done);
            }),
        });
        match outcome {
            Ok(engine) => {
                self.update_status(|m| {
                    m.details = vec![retrieval_detail, llm.describe()];
                    m.mode = SystemMode::Retrieval;
                });
                log::info!("configured {:?}: {} objects", config.knowledge_base.name, engine.kb.len());
                *self.active.write().unwrap_or_else(|e| e.into_inner()) =
                    Some(Arc::new(Active { engine: Some(engine), llm }));
            }
            Err(failure) => {
                log::warn!("configuration failed: {}", failure.error);
                self.update_status(|m| {
                    m.fail(failure.stage, failure.error.to_string());
                    m.mode = SystemMode::Failed;
                });
            }
        }
        Ok(self.get_status())
    }

    pub fn open_session(&self) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(Session::new(id.clone()))));
        id
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session_turns(&self, id: &str) -> Result<Vec<Turn>, ServiceError> {
        let session = self.session(id)?;
        let turns = lock(&session).turns().to_vec();
        Ok(turns)
    }

    /// Runs `f` against the active configuration, holding it for the duration.
    fn with_active<T>(&self, f: impl FnOnce(&Active) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        if self.configuring.load(Ordering::SeqCst) {
            return Err(ServiceError::Reconfiguring);
        }
        let guard = self.active.read().unwrap_or_else(|e| e.into_inner());
        let active = guard
            .as_ref()
            .ok_or_else(|| ServiceError::NotConfigured("the system has not been configured".into()))?;
        f(active)
    }

    pub fn generate_answer(&self, query: &str, results: Option<&[RankedObject]>) -> Result<(String, bool, Option<String>), ServiceError> {
        self.with_active(|a| Ok(answer(&a.llm, query, results)))
    }

    pub fn submit_query(&self, session_id: &str, request: QueryRequest) -> Result<QueryResponse, ServiceError> {
        let session = self.session(session_id)?;
        if request.is_empty() {
            return Err(ServiceError::invalid_request("a query needs text, an image or a selected result"));
        }
        self.with_active(|active| {
            // turns within one session are serialized
            let mut session = lock(&session);
            let described = request.describe();
            let turn_query = TurnQuery {
                text: request.text.clone(),
                selected_id: request.selected_id.clone(),
                image_uploaded: request.image.is_some(),
            };

            let Some(engine) = &active.engine else {
                if request.image.is_some() || request.selected_id.is_some() {
                    return Err(ServiceError::invalid_request(
                        "images and selections need a knowledge base; the system is LLM-only",
                    ));
                }
                let (answer, degraded, warning) = answer(&active.llm, &described, None);
                let turn = session.push(Turn {
                    index: 0,
                    query: turn_query,
                    results: Vec::new(),
                    answer: answer.clone(),
                    degraded,
                    query_vectors: Vec::new(),
                });
                return Ok(QueryResponse {
                    session_id: session.id.clone(),
                    turn,
                    answer,
                    degraded,
                    warning,
                    framework: None,
                    results: Vec::new(),
                    stats: None,
                });
            };

            if let Some(id) = &request.selected_id {
                engine.kb.get_object(id)?;
                if !session.selection_allowed(id) {
                    return Err(ServiceError::invalid_request(format!(
                        "selected id {id:?} is not among the latest turn's results"
                    )));
                }
            }
            let ctx = query_context(&request)?;
            let vectors = engine.encode(&ctx)?;
            let params = engine.params(request.k, request.l, request.framework, request.weights.clone())?;
            let retrieval = engine.search(&vectors, &params)?;
            let (answer, degraded, warning) = answer(&active.llm, &described, Some(&retrieval.results));
            let turn = session.push(Turn {
                index: 0,
                query: turn_query,
                results: retrieval.results.clone(),
                answer: answer.clone(),
                degraded,
                query_vectors: vectors,
            });
            Ok(QueryResponse {
                session_id: session.id.clone(),
                turn,
                answer,
                degraded,
                warning,
                framework: Some(retrieval.framework),
                results: retrieval.results,
                stats: Some(retrieval.stats),
            })
        })
    }

    /// Runs every built framework on one query. The session, when given,
    /// only constrains the selected id; no turn is stored.
    pub fn compare(
        &self,
        session_id: Option<&str>,
        request: QueryRequest,
        ground_truth: bool,
    ) -> Result<CompareResponse, ServiceError> {
        let session = session_id.map(|id| self.session(id)).transpose()?;
        if request.is_empty() {
            return Err(ServiceError::invalid_request("a query needs text, an image or a selected result"));
        }
        self.with_active(|active| {
            let engine = active
                .engine
                .as_ref()
                .ok_or_else(|| ServiceError::NotConfigured("comparison needs a knowledge base".into()))?;
            if let Some(id) = &request.selected_id {
                engine.kb.get_object(id)?;
                if let Some(s) = &session {
                    if !lock(s).selection_allowed(id) {
                        return Err(ServiceError::invalid_request(format!(
                            "selected id {id:?} is not among the latest turn's results"
                        )));
                    }
                }
            }
            let vectors = engine.encode(&query_context(&request)?)?;
            let params = engine.params(request.k, request.l, None, request.weights.clone())?;
            let truth = if ground_truth {
                let w = params.weight_override.as_ref().unwrap_or(engine.index.weights());
                Some(engine.index.exact_topk(&vectors, w, params.k)?)
            } else {
                None
            };
            let built = engine.index.frameworks();
            let frameworks = compare_frameworks(&engine.index, &vectors, &params)
                .into_iter()
                .filter(|o| built.contains(&o.framework))
                .map(|o| {
                    let latency_ms = o.latency.as_secs_f64() * 1e3;
                    match o.result {
                        Ok(r) => FrameworkReport {
                            framework: o.framework,
                            results: engine.ranked(&r),
                            stats: r.stats,
                            latency_ms,
                            recall: truth.as_ref().map(|t| recall_at_k(&t.vertices(), &r.vertices())),
                            error: None,
                        },
                        Err(e) => FrameworkReport {
                            framework: o.framework,
                            results: Vec::new(),
                            stats: SearchStats::default(),
                            latency_ms,
                            recall: None,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect();
            Ok(CompareResponse {
                k: params.k,
                l: params.l,
                frameworks,
                ground_truth: truth.map(|t| engine.ranked(&t)),
            })
        })
    }

    pub fn get_payload(&self, id: &str, modality: &str) -> Result<Payload, ServiceError> {
        self.with_active(|active| {
            let engine = active
                .engine
                .as_ref()
                .ok_or_else(|| ServiceError::NotFound(format!("{id}/{modality}")))?;
            let object = engine.kb.get_object(id)?;
            let content_type = match object.payloads.get(modality) {
                None => return Err(ServiceError::NotFound(format!("{id}/{modality}"))),
                Some(ModalityPayload::Inline(_)) => "text/plain; charset=utf-8",
                Some(ModalityPayload::Vector(_)) => "application/json",
                Some(ModalityPayload::Path(p)) => content_type_for(p),
            };
            let bytes = engine.kb.payload_bytes(id, modality)?;
            Ok(Payload { bytes, content_type })
        })
    }

    /// Runs `f` against the engine, for callers that need more than the
    /// query operations (artifact export, graph statistics).
    pub fn with_engine<T>(&self, f: impl FnOnce(&Engine) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        self.with_active(|a| {
            let engine = a
                .engine
                .as_ref()
                .ok_or_else(|| ServiceError::NotConfigured("no knowledge base is loaded".into()))?;
            f(engine)
        })
    }
}

fn query_context(request: &QueryRequest) -> Result<QueryContext, ServiceError> {
    let mut ctx = QueryContext {
        text: request.text.clone(),
        ..QueryContext::default()
    };
    match (&request.image, &request.selected_id) {
        (Some(_), Some(_)) => {
            return Err(ServiceError::invalid_request(
                "an uploaded image and a selected result both feed the image modality; send one",
            ))
        }
        (Some(bytes), None) => ctx = ctx.with_upload(bytes.clone()),
        (None, Some(id)) => ctx = ctx.with_selected(id.clone()),
        (None, None) => {}
    }
    Ok(ctx)
}

/// Asks the LLM; on failure falls back to the template and flags the answer.
fn answer(llm: &LlmClient, query: &str, results: Option<&[RankedObject]>) -> (String, bool, Option<String>) {
    match llm.generate_answer(query, results) {
        Ok(a) => (a, false, None),
        Err(e) => {
            log::warn!("{e}; falling back to the template answer");
            (template_answer(query, results.unwrap_or(&[])), true, Some(e.to_string()))
        }
    }
}

fn content_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("txt" | "md") => "text/plain; charset=utf-8",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}
