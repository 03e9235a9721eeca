//! System configuration as submitted by the UI or read by the CLI.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use mqa_core::fusion::LearnConfig;
use mqa_core::{BuildParams, EncoderKind, EncoderSpec, Framework, ModalitySpec, SearchParams, WeightVector};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub knowledge_base: KnowledgeBaseConfig,
    #[serde(default)]
    pub encoders: Vec<EncoderConfig>,
    #[serde(default)]
    pub weights: WeightsMode,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub retrieval: SearchParams,
    #[serde(default)]
    pub llm: LlmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBaseConfig {
    pub name: String,
    #[serde(default = "enabled")]
    pub ingest_enabled: bool,
    /// JSON-lines manifest; required when ingest is enabled.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub modalities: Vec<ModalitySpec>,
    /// Modality that receives query text. Defaults to the first hash-ngram
    /// (else external) encoder's modality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_modality: Option<String>,
    /// Modality that receives uploaded or selected images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_modality: Option<String>,
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub modality: String,
    pub kind: EncoderKind,
    /// Defaults to the modality's dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightsMode {
    Learned {
        triplets: PathBuf,
        #[serde(default)]
        learn: LearnConfig,
    },
    #[default]
    Uniform,
    Manual {
        values: Vec<f64>,
    },
}

impl WeightsMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Learned { .. } => "learned",
            Self::Uniform => "uniform",
            Self::Manual { .. } => "manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub build: BuildParams,
    pub frameworks: Vec<Framework>,
    /// Directory of prebuilt graphs to load instead of building.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<PathBuf>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            build: BuildParams::default(),
            frameworks: Framework::ALL.to_vec(),
            artifacts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmProvider {
    #[default]
    Template,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: LlmProvider,
    /// Chat-completion URL, used as is.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: LlmProvider::Template,
            endpoint: None,
            model: "gpt-4o-mini".into(),
            temperature: 0.2,
            timeout_ms: 30_000,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

impl SystemConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ServiceError::invalid_request(format!("{}: {e}", path.display())))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| {
            ServiceError::InvalidConfig(invalid("", format!("{}: {e}", path.display())))
        })?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = self.knowledge_base.manifest.as_mut() {
            fix(m);
        }
        if let WeightsMode::Learned { triplets, .. } = &mut self.weights {
            fix(triplets);
        }
        if let Some(a) = self.index.artifacts.as_mut() {
            fix(a);
        }
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.knowledge_base.modalities.iter().map(|m| m.name.clone()).collect()
    }

    /// Encoder specs with dimensions filled in from the schema.
    pub fn encoder_specs(&self) -> Vec<EncoderSpec> {
        self.encoders
            .iter()
            .map(|e| {
                let dim = e.dimension.unwrap_or_else(|| {
                    self.knowledge_base
                        .modalities
                        .iter()
                        .find(|m| m.name == e.modality)
                        .map_or(0, |m| m.dimension)
                });
                let mut spec = EncoderSpec::new(&e.modality, e.kind, dim);
                spec.endpoint = e.endpoint.clone();
                spec
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let kb = &self.knowledge_base;
        if kb.name.trim().is_empty() {
            return Err(invalid("knowledge_base.name", "a knowledge base name is required"));
        }
        self.validate_llm()?;
        if !kb.ingest_enabled {
            return Ok(());
        }
        if kb.manifest.is_none() {
            return Err(invalid("knowledge_base.manifest", "required when ingest is enabled"));
        }
        if kb.modalities.is_empty() {
            return Err(invalid("knowledge_base.modalities", "declare at least one modality"));
        }
        let mut names = HashSet::new();
        for (i, m) in kb.modalities.iter().enumerate() {
            let field = format!("knowledge_base.modalities[{i}]");
            if m.name.is_empty() || m.dimension == 0 {
                return Err(invalid(&field, "needs a name and a positive dimension"));
            }
            if !names.insert(m.name.as_str()) {
                return Err(invalid(&field, format!("modality {:?} declared twice", m.name)));
            }
        }
        for (field, role) in [
            ("knowledge_base.text_modality", &kb.text_modality),
            ("knowledge_base.image_modality", &kb.image_modality),
        ] {
            if let Some(name) = role {
                if !names.contains(name.as_str()) {
                    return Err(invalid(field, format!("unknown modality {name:?}")));
                }
            }
        }
        self.validate_encoders(&names)?;
        self.validate_weights()?;

        let index = &self.index;
        index.build.validate().map_err(|e| invalid("index.build", e.to_string()))?;
        if index.frameworks.is_empty() {
            return Err(invalid("index.frameworks", "select at least one framework"));
        }
        self.retrieval.validate().map_err(|e| invalid("retrieval", e.to_string()))?;
        if !index.frameworks.contains(&self.retrieval.framework) {
            return Err(invalid(
                "retrieval.framework",
                format!("{} is not among the frameworks to build", self.retrieval.framework.as_str()),
            ));
        }
        if let Some(w) = &self.retrieval.weight_override {
            if w.len() != kb.modalities.len() {
                return Err(invalid("retrieval.weight_override", "one weight per modality"));
            }
        }
        Ok(())
    }

    fn validate_encoders(&self, names: &HashSet<&str>) -> Result<(), ConfigError> {
        let mut covered = HashSet::new();
        for (i, spec) in self.encoder_specs().iter().enumerate() {
            let field = format!("encoders[{i}]");
            if !names.contains(spec.modality.as_str()) {
                return Err(invalid(&field, format!("unknown modality {:?}", spec.modality)));
            }
            if !covered.insert(spec.modality.clone()) {
                return Err(invalid(&field, format!("second encoder for {:?}", spec.modality)));
            }
            spec.validate().map_err(|e| invalid(&field, e.to_string()))?;
            if spec.kind == EncoderKind::JointMean {
                return Err(invalid(&field, "joint-mean is built in for JE, not a modality encoder"));
            }
            let declared = self
                .knowledge_base
                .modalities
                .iter()
                .find(|m| m.name == spec.modality)
                .map(|m| m.dimension);
            if declared != Some(spec.dimension) {
                return Err(invalid(
                    &field,
                    format!("dimension {} differs from the modality's {:?}", spec.dimension, declared),
                ));
            }
        }
        if let Some(m) = self.knowledge_base.modalities.iter().find(|m| !covered.contains(&m.name)) {
            return Err(invalid("encoders", format!("no encoder for modality {:?}", m.name)));
        }
        Ok(())
    }

    fn validate_weights(&self) -> Result<(), ConfigError> {
        match &self.weights {
            WeightsMode::Manual { values } => {
                if values.len() != self.knowledge_base.modalities.len() {
                    return Err(invalid(
                        "weights.values",
                        format!(
                            "{} weights for {} modalities",
                            values.len(),
                            self.knowledge_base.modalities.len()
                        ),
                    ));
                }
                WeightVector::new(values.clone()).map_err(|e| invalid("weights.values", e.to_string()))?;
            }
            WeightsMode::Learned { learn, .. } => {
                if !(learn.lr > 0.0) || !(learn.margin >= 0.0) {
                    return Err(invalid("weights.learn", "lr must be positive and margin non-negative"));
                }
            }
            WeightsMode::Uniform => {}
        }
        Ok(())
    }

    fn validate_llm(&self) -> Result<(), ConfigError> {
        let llm = &self.llm;
        if !(0.0..=2.0).contains(&llm.temperature) {
            return Err(invalid("llm.temperature", format!("{} is outside [0, 2]", llm.temperature)));
        }
        if llm.provider == LlmProvider::External {
            if llm.endpoint.as_deref().map_or(true, str::is_empty) {
                return Err(invalid("llm.endpoint", "the external provider needs an endpoint"));
            }
            if llm.model.is_empty() {
                return Err(invalid("llm.model", "the external provider needs a model name"));
            }
        }
        if llm.timeout_ms == 0 {
            return Err(invalid("llm.timeout_ms", "must be positive"));
        }
        Ok(())
    }
}
