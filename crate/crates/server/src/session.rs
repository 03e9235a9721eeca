use serde::Serialize;

use crate::pipeline::RankedObject;

/// What the user sent in one turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TurnQuery {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_id: Option<String>,
    pub image_uploaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Turn {
    pub index: usize,
    pub query: TurnQuery,
    pub results: Vec<RankedObject>,
    pub answer: String,
    pub degraded: bool,
    /// Encoded query, one vector per modality.
    #[serde(skip)]
    pub query_vectors: Vec<Vec<f32>>,
}

/// Append-only turn history.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub id: String,
    turns: Vec<Turn>,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            turns: Vec::new(),
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn last(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// Appends a turn and returns its index.
    pub fn push(&mut self, mut turn: Turn) -> usize {
        turn.index = self.turns.len();
        self.turns.push(turn);
        self.turns.len() - 1
    }

    /// The active selection must come from the latest turn's results. Before
    /// any turn, any object of the knowledge base may be selected.
    pub fn selection_allowed(&self, id: &str) -> bool {
        self.last().map_or(true, |t| t.results.iter().any(|r| r.id == id))
    }
}
