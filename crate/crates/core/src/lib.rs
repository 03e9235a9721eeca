//! Multi-modal retrieval core.
//!
//! Objects in a knowledge base carry one vector per modality. A learned
//! [`WeightVector`] turns those into a single fused vector whose squared
//! Euclidean distance equals the weighted sum of per-modality squared
//! distances, so one navigation graph ([`NavGraph`]) can serve multi-modal
//! queries without a merge step.
//!
//! ```text
//! manifest.jsonl ──ingest──> KnowledgeBase ──encode──> per-modality vectors
//!                                                        │
//!                          triplets ──learn_weights──> WeightVector
//!                                                        │
//!                                      fuse ──> VectorSet ──build_index──> NavGraph
//!                                                                            │
//!                                       query ──encode + fuse──> greedy_search
//! ```

pub mod catalog;
pub mod encoding;
mod error;
pub mod fusion;
pub mod graph;
pub mod search;
pub mod vectors;

pub use catalog::{KnowledgeBase, ModalityPayload, ModalitySpec, MultiModalObject};
pub use encoding::{EncoderKind, EncoderRegistry, EncoderSpec, QueryContext, QueryImage};
pub use error::{Error, Result};
pub use fusion::{FusedLayout, WeightVector};
pub use graph::{BuildParams, NavGraph};
pub use search::{Framework, SearchParams, SearchResult};
pub use vectors::VectorSet;
