//! Configuration progress as shown on the status panel.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageState {
    #[default]
    Pending,
    Running,
    Done,
    Failed,
}

impl StageState {
    fn rank(self) -> u8 {
        match self {
            Self::Pending => 0,
            Self::Running => 1,
            Self::Done | Self::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Stage {
    pub state: StageState,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemMode {
    #[default]
    Unconfigured,
    Configuring,
    /// Retrieval plus answer generation.
    Retrieval,
    /// No knowledge base; answers come from the LLM alone.
    LlmOnly,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageId {
    DataPreprocessing,
    VectorRepresentation,
    IndexConstruction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Milestones {
    pub mode: SystemMode,
    pub data_preprocessing: Stage,
    pub vector_representation: Stage,
    pub index_construction: Stage,
    /// Retrieval framework and LLM settings in effect.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl Milestones {
    pub fn stage(&self, id: StageId) -> &Stage {
        match id {
            StageId::DataPreprocessing => &self.data_preprocessing,
            StageId::VectorRepresentation => &self.vector_representation,
            StageId::IndexConstruction => &self.index_construction,
        }
    }

    fn stage_mut(&mut self, id: StageId) -> &mut Stage {
        match id {
            StageId::DataPreprocessing => &mut self.data_preprocessing,
            StageId::VectorRepresentation => &mut self.vector_representation,
            StageId::IndexConstruction => &mut self.index_construction,
        }
    }

    /// Moves a stage forward. Backward moves and leaving a final state are
    /// ignored, so a stage only ever goes pending → running → done or failed.
    pub fn advance(&mut self, id: StageId, to: StageState) -> bool {
        let stage = self.stage_mut(id);
        if to.rank() <= stage.state.rank() {
            return false;
        }
        stage.state = to;
        true
    }

    pub fn fail(&mut self, id: StageId, error: impl Into<String>) {
        if self.advance(id, StageState::Failed) {
            self.stage_mut(id).error = Some(error.into());
        }
    }

    pub fn push_detail(&mut self, id: StageId, detail: impl Into<String>) {
        self.stage_mut(id).details.push(detail.into());
    }

    pub fn all_done(&self) -> bool {
        [StageId::DataPreprocessing, StageId::VectorRepresentation, StageId::IndexConstruction]
            .iter()
            .all(|&s| self.stage(s).state == StageState::Done)
    }
}
