//! Hybrid dialogue state: per-category completeness, embedding sum-traces,
//! query / informative-update counts, and the trailing turn window.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::embeddings::{self, Embedding, EmbeddingError};
use crate::schema::TaskSchema;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("turn {got} out of order: state is at turn {current}")]
    TurnOutOfOrder { current: usize, got: usize },
    #[error("category index {0} is not in the schema")]
    UnknownCategory(usize),
    #[error("gain {gain} for category index {category} is outside [0, 1]")]
    GainOutOfRange { category: usize, gain: f64 },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// What a turn was aimed at. `General` turns (free recall, rapport, ...)
/// may carry gains for any category but never count as a category query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Category(usize),
    General,
}

impl Target {
    pub fn category(self) -> Option<usize> {
        match self {
            Target::Category(i) => Some(i),
            Target::General => None,
        }
    }

    pub fn label<'a>(&self, schema: &'a TaskSchema) -> &'a str {
        match *self {
            Target::Category(i) => schema.name(i),
            Target::General => crate::GENERAL,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Category(i) => write!(f, "#{i}"),
            Target::General => f.write_str(crate::GENERAL),
        }
    }
}

/// One processed question-answer exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    pub turn: usize,
    pub target: Target,
    pub strategy: String,
    /// Sparse per-category completeness increments.
    pub gains: Vec<(usize, f64)>,
    pub answer_embedding: Embedding,
    /// Completeness change actually realized for the target category once
    /// the turn is applied (saturation can make it smaller than the gain).
    /// For general turns it is the largest realized change of the turn.
    pub recent_gain_for_target: f64,
}

impl TurnRecord {
    pub fn new(
        turn: usize,
        target: Target,
        strategy: impl Into<String>,
        gains: Vec<(usize, f64)>,
        answer_embedding: Embedding,
    ) -> Self {
        let recent = match target {
            Target::Category(i) => gains
                .iter()
                .filter(|(c, _)| *c == i)
                .map(|(_, g)| *g)
                .sum(),
            Target::General => gains.iter().map(|(_, g)| *g).fold(0.0, f64::max),
        };
        TurnRecord {
            turn,
            target,
            strategy: strategy.into(),
            gains,
            answer_embedding,
            recent_gain_for_target: recent,
        }
    }

    pub fn gain_for(&self, category: usize) -> f64 {
        self.gains
            .iter()
            .filter(|(c, _)| *c == category)
            .map(|(_, g)| *g)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct HybridState {
    dimension: usize,
    window_size: usize,
    completeness: Vec<f64>,
    traces: Vec<Vec<f64>>,
    trace_norms: Vec<f64>,
    prev_traces: Vec<Option<Vec<f64>>>,
    queries: Vec<u32>,
    informative: Vec<u32>,
    general_queries: u32,
    window: VecDeque<TurnRecord>,
    turn: usize,
}

impl HybridState {
    /// Fresh state at turn 0 with zero completeness, zero traces and an
    /// empty window of capacity `window_size`.
    pub fn new(schema: &TaskSchema, dimension: usize, window_size: usize) -> Self {
        let m = schema.len();
        HybridState {
            dimension,
            window_size: window_size.max(1),
            completeness: vec![0.0; m],
            traces: vec![vec![0.0; dimension]; m],
            trace_norms: vec![0.0; m],
            prev_traces: vec![None; m],
            queries: vec![0; m],
            informative: vec![0; m],
            general_queries: 0,
            window: VecDeque::with_capacity(window_size + 1),
            turn: 0,
        }
    }

    /// Applies one turn: saturating completeness accumulation for every gain
    /// entry, query / informative counting and trace update for the target.
    pub fn apply_turn(&mut self, mut record: TurnRecord, eps_upsilon: f64) -> Result<(), StateError> {
        if record.turn != self.turn + 1 {
            return Err(StateError::TurnOutOfOrder {
                current: self.turn,
                got: record.turn,
            });
        }
        let m = self.completeness.len();
        if let Target::Category(i) = record.target {
            if i >= m {
                return Err(StateError::UnknownCategory(i));
            }
        }
        for &(c, g) in &record.gains {
            if c >= m {
                return Err(StateError::UnknownCategory(c));
            }
            if !(0.0..=1.0).contains(&g) {
                return Err(StateError::GainOutOfRange { category: c, gain: g });
            }
        }
        if record.answer_embedding.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                got: record.answer_embedding.dimension(),
            }
            .into());
        }

        let before = self.completeness.clone();
        for &(c, g) in &record.gains {
            self.completeness[c] = (self.completeness[c] + g).min(1.0);
        }
        let realized = |c: usize, s: &Self| s.completeness[c] - before[c];

        match record.target {
            Target::Category(i) => {
                let delta = realized(i, self);
                self.queries[i] += 1;
                if delta > eps_upsilon {
                    self.informative[i] += 1;
                }
                let snapshot = self.traces[i].clone();
                embeddings::add_into(&mut self.traces[i], &record.answer_embedding)?;
                self.trace_norms[i] = embeddings::l2_norm(&self.traces[i]);
                self.prev_traces[i] = Some(snapshot);
                record.recent_gain_for_target = delta;
            }
            Target::General => {
                self.general_queries += 1;
                record.recent_gain_for_target = record
                    .gains
                    .iter()
                    .map(|&(c, _)| realized(c, self))
                    .fold(0.0, f64::max);
            }
        }

        self.turn = record.turn;
        self.window.push_back(record);
        while self.window.len() > self.window_size {
            self.window.pop_front();
        }
        Ok(())
    }

    /// Per-category query counts over the trailing window. General turns are
    /// not counted, so the sum equals the window length minus general turns.
    pub fn window_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.completeness.len()];
        for r in &self.window {
            if let Target::Category(i) = r.target {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Gain recorded at the most recent in-window query of `category`.
    pub fn recent_gain(&self, category: usize) -> Option<f64> {
        self.window
            .iter()
            .rev()
            .find(|r| r.target == Target::Category(category))
            .map(|r| r.recent_gain_for_target)
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn num_categories(&self) -> usize {
        self.completeness.len()
    }

    pub fn completeness(&self) -> &[f64] {
        &self.completeness
    }

    pub fn trace(&self, category: usize) -> &[f64] {
        &self.traces[category]
    }

    pub fn traces(&self) -> &[Vec<f64>] {
        &self.traces
    }

    pub fn trace_norms(&self) -> &[f64] {
        &self.trace_norms
    }

    pub fn prev_trace(&self, category: usize) -> Option<&[f64]> {
        self.prev_traces[category].as_deref()
    }

    pub fn queries(&self) -> &[u32] {
        &self.queries
    }

    pub fn informative(&self) -> &[u32] {
        &self.informative
    }

    pub fn general_queries(&self) -> u32 {
        self.general_queries
    }

    pub fn window(&self) -> impl ExactSizeIterator<Item = &TurnRecord> + DoubleEndedIterator {
        self.window.iter()
    }

    pub fn last_record(&self) -> Option<&TurnRecord> {
        self.window.back()
    }
}
