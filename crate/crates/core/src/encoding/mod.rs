//! Payload and query encoding through a per-modality encoder registry.

mod builtin;
mod external;

pub use builtin::{
    decode_image, encode_image_hist, encode_text_hash_ngram, encode_vector_passthrough,
    joint_encode, COLOR_HIST_DIM,
};
pub use external::{ExternalEncoder, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{KnowledgeBase, ModalityPayload, ModalitySpec, MultiModalObject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    HashNgram,
    ColorHist,
    PassthroughVector,
    ExternalHttp,
    /// Only valid as the joint encoder of the JE framework.
    JointMean,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HashNgram => "hash-ngram",
            Self::ColorHist => "color-hist",
            Self::PassthroughVector => "passthrough-vector",
            Self::ExternalHttp => "external-http",
            Self::JointMean => "joint-mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub id: String,
    pub modality: String,
    pub kind: EncoderKind,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl EncoderSpec {
    pub fn new(modality: impl Into<String>, kind: EncoderKind, dimension: usize) -> Self {
        let modality = modality.into();
        Self {
            id: format!("{}:{}", kind.as_str(), modality),
            modality,
            kind,
            dimension,
            endpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidParameter(format!(
                "encoder {:?}: dimension must be positive",
                self.id
            )));
        }
        match self.kind {
            EncoderKind::ExternalHttp if self.endpoint.is_none() => Err(Error::InvalidParameter(
                format!("encoder {:?}: external-http needs an endpoint", self.id),
            )),
            EncoderKind::ColorHist if self.dimension != COLOR_HIST_DIM => {
                Err(Error::InvalidParameter(format!(
                    "encoder {:?}: color-hist produces {COLOR_HIST_DIM} dims",
                    self.id
                )))
            }
            _ => Ok(()),
        }
    }
}

/// What an encoder is asked to encode.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    Text(&'a str),
    Vector(&'a [f32]),
    /// Raw file or upload content, e.g. an encoded image.
    Bytes(&'a [u8]),
}

#[derive(Debug, Clone)]
struct Encoder {
    spec: EncoderSpec,
    external: Option<ExternalEncoder>,
}

impl Encoder {
    fn encode(&self, input: EncoderInput<'_>) -> Result<Vec<f32>> {
        let spec = &self.spec;
        let unsupported = |what: &str| {
            Error::SchemaViolation(format!(
                "encoder {:?} ({}) cannot encode {what}",
                spec.id,
                spec.kind.as_str()
            ))
        };
        match (spec.kind, input) {
            (EncoderKind::HashNgram, EncoderInput::Text(t)) => {
                Ok(encode_text_hash_ngram(t, spec.dimension))
            }
            (EncoderKind::HashNgram, EncoderInput::Bytes(b)) => {
                let text = std::str::from_utf8(b).map_err(|_| unsupported("non-UTF-8 bytes"))?;
                Ok(encode_text_hash_ngram(text, spec.dimension))
            }
            (EncoderKind::ColorHist, EncoderInput::Bytes(b)) => {
                Ok(encode_image_hist(&decode_image(b)?))
            }
            (EncoderKind::PassthroughVector, EncoderInput::Vector(v)) => {
                encode_vector_passthrough(v, spec.dimension)
            }
            (EncoderKind::PassthroughVector, EncoderInput::Bytes(b)) => {
                let v: Vec<f32> = serde_json::from_slice(b)
                    .map_err(|_| unsupported("bytes that are not a JSON float array"))?;
                encode_vector_passthrough(&v, spec.dimension)
            }
            (EncoderKind::ExternalHttp, input) => self
                .external
                .as_ref()
                .expect("external encoders are built with a client")
                .encode(&spec.modality, input, spec.dimension),
            (_, EncoderInput::Text(_)) => Err(unsupported("text")),
            (_, EncoderInput::Vector(_)) => Err(unsupported("vectors")),
            (_, EncoderInput::Bytes(_)) => Err(unsupported("binary payloads")),
        }
    }
}

/// One encoder per schema modality, plus the modalities that receive a query's
/// free text and its image.
#[derive(Debug, Clone)]
pub struct EncoderRegistry {
    modalities: Vec<ModalitySpec>,
    encoders: Vec<Encoder>,
    text_modality: Option<usize>,
    image_modality: Option<usize>,
}

impl EncoderRegistry {
    /// Registers `specs` against `schema`. Every schema modality needs exactly
    /// one encoder with the schema's dimension.
    pub fn new(schema: &[ModalitySpec], specs: Vec<EncoderSpec>) -> Result<Self> {
        Self::with_limits(schema, specs, DEFAULT_TIMEOUT, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_limits(
        schema: &[ModalitySpec],
        specs: Vec<EncoderSpec>,
        timeout: std::time::Duration,
        max_in_flight: usize,
    ) -> Result<Self> {
        let mut encoders = Vec::with_capacity(schema.len());
        for m in schema {
            let mut matching = specs.iter().filter(|s| s.modality == m.name);
            let spec = matching
                .next()
                .ok_or_else(|| Error::UnknownEncoder(m.name.clone()))?;
            if matching.next().is_some() {
                return Err(Error::InvalidParameter(format!(
                    "modality {:?} has more than one encoder",
                    m.name
                )));
            }
            spec.validate()?;
            if spec.kind == EncoderKind::JointMean {
                return Err(Error::InvalidParameter(format!(
                    "encoder {:?}: joint-mean is not a per-modality encoder",
                    spec.id
                )));
            }
            if spec.dimension != m.dimension {
                return Err(Error::DimensionMismatch {
                    expected: m.dimension,
                    actual: spec.dimension,
                });
            }
            let external = (spec.kind == EncoderKind::ExternalHttp).then(|| {
                ExternalEncoder::new(spec.endpoint.as_deref().unwrap(), timeout, max_in_flight)
            });
            encoders.push(Encoder {
                spec: spec.clone(),
                external,
            });
        }
        if let Some(stray) = specs.iter().find(|s| !schema.iter().any(|m| m.name == s.modality)) {
            return Err(Error::SchemaViolation(format!(
                "encoder {:?} targets undeclared modality {:?}",
                stray.id, stray.modality
            )));
        }
        let kind_at = |k: EncoderKind| encoders.iter().position(|e| e.spec.kind == k);
        let text_modality = kind_at(EncoderKind::HashNgram).or_else(|| kind_at(EncoderKind::ExternalHttp));
        let image_modality = kind_at(EncoderKind::ColorHist)
            .or_else(|| (0..encoders.len()).find(|&i| Some(i) != text_modality));
        Ok(Self {
            modalities: schema.to_vec(),
            encoders,
            text_modality,
            image_modality,
        })
    }

    /// Overrides which modalities receive a query's text and image.
    pub fn with_roles(mut self, text: Option<&str>, image: Option<&str>) -> Result<Self> {
        let find = |name: &str| {
            self.modalities
                .iter()
                .position(|m| m.name == name)
                .ok_or_else(|| Error::SchemaViolation(format!("unknown modality {name:?}")))
        };
        if let Some(t) = text {
            self.text_modality = Some(find(t)?);
        }
        if let Some(i) = image {
            self.image_modality = Some(find(i)?);
        }
        Ok(self)
    }

    pub fn specs(&self) -> impl Iterator<Item = &EncoderSpec> {
        self.encoders.iter().map(|e| &e.spec)
    }

    pub fn text_modality(&self) -> Option<&str> {
        self.text_modality.map(|i| self.modalities[i].name.as_str())
    }

    pub fn image_modality(&self) -> Option<&str> {
        self.image_modality.map(|i| self.modalities[i].name.as_str())
    }

    fn encoder(&self, modality: &str) -> Result<(usize, &Encoder)> {
        self.modalities
            .iter()
            .position(|m| m.name == modality)
            .map(|i| (i, &self.encoders[i]))
            .ok_or_else(|| Error::UnknownEncoder(modality.to_string()))
    }

    pub fn encode(&self, modality: &str, input: EncoderInput<'_>) -> Result<Vec<f32>> {
        self.encoder(modality)?.1.encode(input)
    }

    fn encode_payload(&self, modality: &str, payload: &ModalityPayload, base_dir: &Path) -> Result<Vec<f32>> {
        match payload {
            ModalityPayload::Inline(text) => self.encode(modality, EncoderInput::Text(text)),
            ModalityPayload::Vector(v) => self.encode(modality, EncoderInput::Vector(v)),
            ModalityPayload::Path(p) => {
                let bytes = fs::read(base_dir.join(p))?;
                self.encode(modality, EncoderInput::Bytes(&bytes))
            }
        }
    }
}

/// Encodes every schema modality of one object; absent payloads become zero
/// vectors.
pub fn encode_object(
    kb: &KnowledgeBase,
    object: &MultiModalObject,
    registry: &EncoderRegistry,
) -> Result<BTreeMap<String, Vec<f32>>> {
    kb.modalities
        .iter()
        .map(|m| {
            let v = match object.payloads.get(&m.name) {
                Some(payload) => registry.encode_payload(&m.name, payload, kb.base_dir())?,
                None => vec![0.0; m.dimension],
            };
            Ok((m.name.clone(), v))
        })
        .collect()
}

/// Encodes the whole collection in parallel and attaches the vectors.
pub fn encode_knowledge_base(kb: &mut KnowledgeBase, registry: &EncoderRegistry) -> Result<()> {
    let vectors = kb
        .objects
        .par_iter()
        .map(|o| encode_object(kb, o, registry))
        .collect::<Result<Vec<_>>>()?;
    kb.set_vectors(vectors)
}

/// Image part of a query.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryImage {
    /// Uploaded image bytes.
    Upload(Vec<u8>),
    /// A result from an earlier turn; its stored vector is reused as is.
    Selected(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryContext {
    pub text: Option<String>,
    pub image: Option<QueryImage>,
    /// Precomputed per-modality query vectors.
    pub vectors: BTreeMap<String, Vec<f32>>,
}

impl QueryContext {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn with_selected(mut self, id: impl Into<String>) -> Self {
        self.image = Some(QueryImage::Selected(id.into()));
        self
    }

    pub fn with_upload(mut self, bytes: Vec<u8>) -> Self {
        self.image = Some(QueryImage::Upload(bytes));
        self
    }

    pub fn with_vector(mut self, modality: impl Into<String>, v: Vec<f32>) -> Self {
        self.vectors.insert(modality.into(), v);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_none() && self.image.is_none() && self.vectors.is_empty()
    }
}

/// Per-modality query vectors in schema order. Modalities the query does not
/// touch are zero vectors.
pub fn encode_query(
    kb: &KnowledgeBase,
    query: &QueryContext,
    registry: &EncoderRegistry,
) -> Result<Vec<Vec<f32>>> {
    if query.is_empty() {
        return Err(Error::InvalidParameter(
            "a query needs text, an image or a vector".into(),
        ));
    }
    let mut out: Vec<Option<Vec<f32>>> = vec![None; kb.modalities.len()];
    let mut assign = |slot: usize, v: Vec<f32>, source: &str| -> Result<()> {
        if out[slot].is_some() {
            return Err(Error::InvalidParameter(format!(
                "modality {:?} receives more than one query input ({source})",
                kb.modalities[slot].name
            )));
        }
        out[slot] = Some(v);
        Ok(())
    };

    if let Some(text) = &query.text {
        let modality = registry
            .text_modality()
            .ok_or_else(|| Error::SchemaViolation("no modality accepts query text".into()))?;
        let (slot, encoder) = registry.encoder(modality)?;
        assign(slot, encoder.encode(EncoderInput::Text(text))?, "text")?;
    }
    if let Some(image) = &query.image {
        let modality = registry
            .image_modality()
            .ok_or_else(|| Error::SchemaViolation("no modality accepts a query image".into()))?;
        let (slot, encoder) = registry.encoder(modality)?;
        let v = match image {
            QueryImage::Upload(bytes) => encoder.encode(EncoderInput::Bytes(bytes))?,
            QueryImage::Selected(id) => {
                let vertex = kb.vertex_of(id).ok_or_else(|| Error::NotFound(id.clone()))?;
                kb.stored_vector(vertex, modality)?.to_vec()
            }
        };
        assign(slot, v, "image")?;
    }
    for (modality, v) in &query.vectors {
        let (slot, _) = registry.encoder(modality)?;
        let dim = kb.modalities[slot].dimension;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        assign(slot, v.clone(), "vector")?;
    }

    Ok(out
        .into_iter()
        .zip(&kb.modalities)
        .map(|(v, m)| v.unwrap_or_else(|| vec![0.0; m.dimension]))
        .collect())
}
