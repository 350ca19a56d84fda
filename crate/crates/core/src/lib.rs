//! Turn-level telemetry for schema-grounded information-gathering dialogues.
//!
//! A [`HybridState`] tracks per-category completeness, embedding traces and
//! query counts. [`telemetry`] turns a state snapshot into a Progress
//! Estimator vector and a Stalling Index, and [`simulator`] replays or
//! explores dialogues over a fixed response [`Corpus`].

pub mod corpus;
pub mod embeddings;
pub mod fixtures;
pub mod schema;
pub mod simulator;
pub mod state;
pub mod telemetry;
pub mod transcript;

/// Pseudo-target for actions not aimed at a single category.
pub const GENERAL: &str = "general";

pub use corpus::{Action, Corpus, CorpusError, Response};
pub use embeddings::{Embedding, EmbeddingError, EmbeddingProvider, EmbeddingStore, ProviderKind, SyntheticEmbedder};
pub use schema::{Category, SchemaError, TaskSchema};
pub use simulator::{Condition, Episode, EpisodeConfig, EpisodeTrace, SimError, Termination};
pub use state::{HybridState, StateError, Target, TurnRecord};
pub use telemetry::{MonitorReport, PeVariant, StallWindow, TelemetryConfig, TelemetryError, TelemetryFrame};
pub use transcript::{TranscriptError, TranscriptRow};
