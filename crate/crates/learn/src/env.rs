//! Observation and reward wiring between the simulator and the learner.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use dt_core::{
    Corpus, Episode, EpisodeConfig, HybridState, SimError, TelemetryConfig, TelemetryFrame, Termination,
};

use crate::LearnError;

/// The three agent variants of the campaign. `DtNoSiPenalty` sees the full
/// telemetry but is not charged for stalling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    FullDt,
    DtNoSiPenalty,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::FullDt, Variant::DtNoSiPenalty];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FullDt => "full_dt",
            Variant::DtNoSiPenalty => "dt_no_si_penalty",
        }
    }

    pub fn full_observations(self) -> bool {
        self != Variant::Baseline
    }

    pub fn si_penalty(self) -> bool {
        self == Variant::FullDt
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = LearnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| LearnError::ConfigInvalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationSpec {
    pub variant: Variant,
    pub categories: usize,
}

impl ObservationSpec {
    pub fn new(variant: Variant, categories: usize) -> Self {
        ObservationSpec { variant, categories }
    }

    /// `|M| + 1` for the baseline, `2|M| + 2` with telemetry.
    pub fn dimension(&self) -> usize {
        if self.variant.full_observations() {
            2 * self.categories + 2
        } else {
            self.categories + 1
        }
    }
}

/// Writes the observation for `state` into `out`. Baseline agents see
/// completeness and elapsed time; the others also see PE and SI.
pub fn observe_into(
    state: &HybridState,
    frame: &TelemetryFrame,
    t: usize,
    horizon: usize,
    spec: &ObservationSpec,
    out: &mut Vec<f64>,
) -> Result<(), LearnError> {
    let m = spec.categories;
    if state.num_categories() != m || frame.pe.len() != m || frame.turn != state.turn() {
        return Err(LearnError::SpecMismatch {
            expected: m,
            got: state.num_categories(),
        });
    }
    if horizon == 0 {
        return Err(LearnError::ConfigInvalid("horizon must be positive".into()));
    }
    out.clear();
    out.extend_from_slice(state.completeness());
    if spec.variant.full_observations() {
        out.extend(frame.pe.iter().map(|p| p.clamp(0.0, 1.0)));
        out.push(frame.si);
    }
    out.push((t as f64 / horizon as f64).min(1.0));
    debug_assert_eq!(out.len(), spec.dimension());
    Ok(())
}

pub fn observe(
    state: &HybridState,
    frame: &TelemetryFrame,
    t: usize,
    horizon: usize,
    spec: &ObservationSpec,
) -> Result<Vec<f64>, LearnError> {
    let mut out = Vec::with_capacity(spec.dimension());
    observe_into(state, frame, t, horizon, spec, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub c_step: f64,
    pub b_term: f64,
    pub kappa: f64,
}

impl RewardSpec {
    pub fn new(c_step: f64, b_term: f64, kappa: f64) -> Result<Self, LearnError> {
        let r = RewardSpec { c_step, b_term, kappa };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.kappa >= 0.0 && self.b_term > 0.0 && self.c_step.is_finite() && self.kappa.is_finite()) {
            return Err(LearnError::ConfigInvalid(format!("bad reward spec {self:?}")));
        }
        Ok(())
    }
}

/// `-c_step + b_term * [all resolved] - kappa * SI`.
pub fn reward(frame: &TelemetryFrame, cause: Option<Termination>, spec: &RewardSpec) -> f64 {
    let bonus = if cause == Some(Termination::AllResolved) { spec.b_term } else { 0.0 };
    -spec.c_step + bonus - spec.kappa * frame.si
}

/// Simulator plus observation and reward adapters, with automatic reset left
/// to the caller.
#[derive(Debug, Clone)]
pub struct DialogueEnv {
    episode: Episode,
    obs_spec: ObservationSpec,
    reward_spec: RewardSpec,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub reward: f64,
    pub done: bool,
    pub cause: Option<Termination>,
    pub si: f64,
}

impl DialogueEnv {
    pub fn new(
        corpus: Arc<Corpus>,
        telemetry: TelemetryConfig,
        episode: EpisodeConfig,
        variant: Variant,
        reward_spec: RewardSpec,
    ) -> Result<Self, LearnError> {
        reward_spec.validate()?;
        let m = corpus.schema().len();
        let episode = Episode::new(corpus, telemetry, episode)?;
        Ok(DialogueEnv { episode, obs_spec: ObservationSpec::new(variant, m), reward_spec })
    }

    pub fn num_actions(&self) -> usize {
        self.episode.corpus().num_actions()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_spec.dimension()
    }

    pub fn observation_spec(&self) -> &ObservationSpec {
        &self.obs_spec
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward_spec
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn reset(&mut self) {
        self.episode.reset();
    }

    pub fn into_episode(self) -> Episode {
        self.episode
    }

    pub fn observe(&self, out: &mut Vec<f64>) -> Result<(), LearnError> {
        let ep = &self.episode;
        observe_into(ep.state(), ep.last_frame(), ep.turn(), ep.config().max_turns, &self.obs_spec, out)
    }

    pub fn step(&mut self, action: usize) -> Result<Step, LearnError> {
        let out = self.episode.step(action).map_err(|e: SimError| LearnError::Sim(Box::new(e)))?;
        Ok(Step {
            reward: reward(&out.frame, out.cause, &self.reward_spec),
            done: out.done,
            cause: out.cause,
            si: out.frame.si,
        })
    }
}
