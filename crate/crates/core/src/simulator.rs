//! Episodic dialogue simulator over a fixed corpus.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError};
use crate::state::{HybridState, StateError, TurnRecord};
use crate::telemetry::{self, TelemetryConfig, TelemetryError, TelemetryFrame};
use crate::transcript::{self, TranscriptRow};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("episode already finished ({0})")]
    EpisodeFinished(Termination),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("invalid episode config: {0}")]
    ConfigInvalid(String),
    #[error("empty action script")]
    EmptyScript,
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Condition {
    /// Terminate on resolution or budget.
    A,
    /// Additionally terminate once SI reaches the stall threshold.
    B,
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Condition::A),
            "B" | "b" => Ok(Condition::B),
            other => Err(format!("unknown condition `{other}` (expected A or B)")),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::A => "A",
            Condition::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AllResolved,
    BudgetExhausted,
    StallTerminated,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::AllResolved => "all_resolved",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::StallTerminated => "stall_terminated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub condition: Condition,
    pub max_turns: usize,
    pub resolution_threshold: f64,
    pub si_terminate: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            condition: Condition::A,
            max_turns: 25,
            resolution_threshold: 0.8,
            si_terminate: 0.10,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn with_condition(condition: Condition) -> Self {
        EpisodeConfig {
            condition,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_turns < 1 {
            return Err(SimError::ConfigInvalid("max_turns must be at least 1".into()));
        }
        if !(self.resolution_threshold > 0.0 && self.resolution_threshold < 1.0) {
            return Err(SimError::ConfigInvalid(format!(
                "resolution_threshold {} outside (0, 1)",
                self.resolution_threshold
            )));
        }
        if !(self.si_terminate > 0.0 && self.si_terminate <= 1.0) {
            return Err(SimError::ConfigInvalid(format!(
                "si_terminate {} outside (0, 1]",
                self.si_terminate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub record: TurnRecord,
    pub frame: TelemetryFrame,
    pub done: bool,
    pub cause: Option<Termination>,
}

/// One running dialogue. Holds the state, per-action visit counts and the
/// transcript so far.
#[derive(Debug, Clone)]
pub struct Episode {
    corpus: Arc<Corpus>,
    telemetry: TelemetryConfig,
    cfg: EpisodeConfig,
    state: HybridState,
    visits: Vec<usize>,
    records: Vec<TurnRecord>,
    rows: Vec<TranscriptRow>,
    frames: Vec<TelemetryFrame>,
    initial: TelemetryFrame,
    termination: Option<Termination>,
}

impl Episode {
    pub fn new(corpus: Arc<Corpus>, telemetry: TelemetryConfig, cfg: EpisodeConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let telemetry = telemetry.resolved(corpus.provider().kind());
        telemetry.validate(corpus.schema())?;
        let state = HybridState::new(corpus.schema(), corpus.provider().dimension(), telemetry.window);
        let initial = telemetry::frame(&state, corpus.schema(), &telemetry);
        Ok(Episode {
            visits: vec![0; corpus.num_actions()],
            corpus,
            telemetry,
            cfg,
            state,
            records: Vec::new(),
            rows: Vec::new(),
            frames: Vec::new(),
            initial,
            termination: None,
        })
    }

    /// Restarts the dialogue from turn 0 with the same corpus and configuration.
    pub fn reset(&mut self) {
        self.state = HybridState::new(self.corpus.schema(), self.corpus.provider().dimension(), self.telemetry.window);
        self.visits.iter_mut().for_each(|v| *v = 0);
        self.records.clear();
        self.rows.clear();
        self.frames.clear();
        self.termination = None;
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, SimError> {
        if let Some(t) = self.termination {
            return Err(SimError::EpisodeFinished(t));
        }
        let act = self
            .corpus
            .action(action)
            .ok_or_else(|| CorpusError::UnknownAction(format!("#{action}")))?
            .clone();
        self.visits[action] += 1;
        let rung = self.corpus.respond(action, self.visits[action])?;
        let turn = self.state.turn() + 1;
        let record = TurnRecord::new(turn, act.target, act.strategy.clone(), rung.gains.clone(), rung.embedding.clone());
        let schema = self.corpus.schema();
        let row = TranscriptRow {
            turn,
            strategy: act.strategy.clone(),
            target_category: act.target.label(schema).to_string(),
            question: self.corpus.template(action)?.realize(&[]),
            answer: rung.response.text.clone(),
            gains: rung.response.gains.clone(),
            embedding_key: rung.response.key().to_string(),
        };
        self.state.apply_turn(record, self.telemetry.eps_upsilon)?;
        let record = self.state.last_record().expect("turn just applied").clone();
        let frame = telemetry::frame(&self.state, schema, &self.telemetry);

        let tau = self.cfg.resolution_threshold;
        let cause = if self.state.completeness().iter().all(|&u| u >= tau) {
            Some(Termination::AllResolved)
        } else if turn >= self.cfg.max_turns {
            Some(Termination::BudgetExhausted)
        } else if self.cfg.condition == Condition::B
            && turn >= self.telemetry.window
            && frame.si >= self.cfg.si_terminate
        {
            Some(Termination::StallTerminated)
        } else {
            None
        };
        self.termination = cause;
        self.records.push(record.clone());
        self.rows.push(row);
        self.frames.push(frame.clone());
        Ok(StepOutcome {
            record,
            frame,
            done: cause.is_some(),
            cause,
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn telemetry_config(&self) -> &TelemetryConfig {
        &self.telemetry
    }

    pub fn state(&self) -> &HybridState {
        &self.state
    }

    pub fn turn(&self) -> usize {
        self.state.turn()
    }

    pub fn is_done(&self) -> bool {
        self.termination.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// Frame of the latest turn, or of the fresh state before any turn.
    pub fn last_frame(&self) -> &TelemetryFrame {
        self.frames.last().unwrap_or(&self.initial)
    }

    pub fn visits(&self) -> &[usize] {
        &self.visits
    }

    pub fn totals(&self) -> Totals {
        Totals::of(&self.state, &self.frames, self.cfg.resolution_threshold)
    }

    /// Consumes the episode into its trace. Unfinished episodes report
    /// `None` as termination.
    pub fn into_trace(self) -> EpisodeTrace {
        let totals = self.totals();
        EpisodeTrace {
            actions: self
                .records
                .iter()
                .zip(&self.rows)
                .map(|(r, row)| format!("{}/{}", r.strategy, row.target_category))
                .collect(),
            records: self.records,
            rows: self.rows,
            frames: self.frames,
            termination: self.termination,
            totals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    /// Mean completeness over categories.
    pub total_knowledge: f64,
    pub complete_categories: usize,
    pub mean_si: f64,
    pub turns: usize,
    pub final_completeness: Vec<f64>,
}

impl Totals {
    fn of(state: &HybridState, frames: &[TelemetryFrame], tau: f64) -> Self {
        let u = state.completeness();
        Totals {
            total_knowledge: u.iter().sum::<f64>() / u.len() as f64,
            complete_categories: u.iter().filter(|&&x| x >= tau).count(),
            mean_si: if frames.is_empty() {
                0.0
            } else {
                frames.iter().map(|f| f.si).sum::<f64>() / frames.len() as f64
            },
            turns: state.turn(),
            final_completeness: u.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub actions: Vec<String>,
    pub records: Vec<TurnRecord>,
    pub rows: Vec<TranscriptRow>,
    pub frames: Vec<TelemetryFrame>,
    pub termination: Option<Termination>,
    pub totals: Totals,
}

#[derive(Serialize)]
struct Summary<'a> {
    termination: Option<Termination>,
    flagged_turns: usize,
    stall_windows: Vec<SummaryWindow>,
    totals: &'a Totals,
    categories: Vec<&'a str>,
}

#[derive(Serialize)]
struct SummaryWindow {
    start: usize,
    end: usize,
    peak_si: f64,
    categories: Vec<String>,
}

impl EpisodeTrace {
    pub fn flagged_turns(&self) -> usize {
        self.frames.iter().filter(|f| f.stall_flag).count()
    }

    pub fn summary_json(&self, corpus: &Corpus) -> String {
        let schema = corpus.schema();
        let windows = telemetry::stall_windows(&self.frames)
            .into_iter()
            .map(|w| SummaryWindow {
                start: w.start,
                end: w.end,
                peak_si: round6(w.peak_si),
                categories: w.categories.iter().map(|&i| schema.name(i).to_string()).collect(),
            })
            .collect();
        let mut totals = self.totals.clone();
        totals.total_knowledge = round6(totals.total_knowledge);
        totals.mean_si = round6(totals.mean_si);
        totals.final_completeness.iter_mut().for_each(|x| *x = round6(*x));
        let summary = Summary {
            termination: self.termination,
            flagged_turns: self.flagged_turns(),
            stall_windows: windows,
            totals: &totals,
            categories: schema.names().collect(),
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
    }

    /// Writes `records.jsonl`, `frames.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path, corpus: &Corpus) -> Result<(), SimError> {
        let io_err = |p: &Path| {
            let path = p.display().to_string();
            move |source| SimError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("records.jsonl");
        let mut buf = Vec::new();
        transcript::write_jsonl(&mut buf, &self.rows).map_err(io_err(&p))?;
        std::fs::write(&p, buf).map_err(io_err(&p))?;
        let p = dir.join("frames.csv");
        let mut buf = Vec::new();
        telemetry::write_frames_csv(&mut buf, corpus.schema(), &self.frames).map_err(io_err(&p))?;
        std::fs::write(&p, buf).map_err(io_err(&p))?;
        let p = dir.join("summary.json");
        std::fs::write(&p, self.summary_json(corpus)).map_err(io_err(&p))?;
        Ok(())
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Plays `actions` until the script ends or the episode terminates. A script
/// shorter than the turn budget acts as the budget, so every finished trace
/// carries a termination cause.
pub fn run_scripted(
    corpus: Arc<Corpus>,
    telemetry: TelemetryConfig,
    mut cfg: EpisodeConfig,
    actions: &[usize],
) -> Result<EpisodeTrace, SimError> {
    if actions.is_empty() {
        return Err(SimError::EmptyScript);
    }
    cfg.max_turns = cfg.max_turns.min(actions.len());
    let mut ep = Episode::new(corpus, telemetry, cfg)?;
    for &a in actions {
        if ep.step(a)?.done {
            break;
        }
    }
    Ok(ep.into_trace())
}

/// Maps `(strategy, category)` rows of a transcript onto corpus actions.
pub fn script_from_rows(corpus: &Corpus, rows: &[TranscriptRow]) -> Result<Vec<usize>, SimError> {
    rows.iter()
        .map(|r| Ok(corpus.action_index(&r.strategy, &r.target_category)?))
        .collect()
}
