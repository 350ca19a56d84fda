//! Progress Estimator and Stalling Index over hybrid-state snapshots, and the
//! turn-by-turn monitoring loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{dot, ProviderKind};
use crate::schema::TaskSchema;
use crate::state::{HybridState, StateError, TurnRecord};

pub const BETA_SYNTHETIC: f64 = 0.4;
pub const BETA_FILE_BACKED: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("invalid telemetry config: {0}")]
    ConfigInvalid(String),
    #[error("informative count {k} exceeds query count {m}")]
    CountInvariantViolated { m: u32, k: u32 },
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("malformed transcript: {0}")]
    MalformedTranscript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeVariant {
    #[default]
    Heuristic,
    Formal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    pub window: usize,
    pub r_min: usize,
    pub theta: f64,
    pub alpha: f64,
    /// `None` picks the provider default (0.4 synthetic, 0.5 file-backed).
    pub beta: Option<f64>,
    pub lambda: f64,
    pub eps_upsilon: f64,
    pub eps_e: f64,
    pub eps_cos: f64,
    pub pe_variant: PeVariant,
    /// Multiplier on each repeated category's semantic stall score;
    /// categories not listed use 1.0.
    pub si_category_scale: BTreeMap<String, f64>,
    pub compression_knee: f64,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig {
            window: 3,
            r_min: 2,
            theta: 0.20,
            alpha: 0.5,
            beta: None,
            lambda: 5.0,
            eps_upsilon: 0.05,
            eps_e: 1e-8,
            eps_cos: 1e-8,
            pe_variant: PeVariant::Heuristic,
            si_category_scale: BTreeMap::new(),
            compression_knee: 0.8,
        }
    }
}

impl TelemetryConfig {
    /// Defaults with β fixed for the given provider kind.
    pub fn for_provider(kind: ProviderKind) -> Self {
        TelemetryConfig::default().resolved(kind)
    }

    /// Fills an unset β from the provider kind.
    pub fn resolved(mut self, kind: ProviderKind) -> Self {
        if self.beta.is_none() {
            self.beta = Some(match kind {
                ProviderKind::Synthetic => BETA_SYNTHETIC,
                ProviderKind::FileBacked => BETA_FILE_BACKED,
            });
        }
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(BETA_SYNTHETIC)
    }

    pub fn validate(&self, schema: &TaskSchema) -> Result<(), TelemetryError> {
        let bad = |m: String| Err(TelemetryError::ConfigInvalid(m));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.window < 1 {
            return bad("window must be at least 1".into());
        }
        if self.r_min < 2 {
            return bad("r_min must be at least 2".into());
        }
        for (name, v) in [("theta", self.theta), ("alpha", self.alpha), ("beta", self.beta())] {
            if !unit(v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        for (name, v) in [("eps_upsilon", self.eps_upsilon), ("eps_e", self.eps_e), ("eps_cos", self.eps_cos)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} = {v} must be a small positive number"));
            }
        }
        if !(self.compression_knee > 0.0 && self.compression_knee <= 1.0) {
            return bad(format!("compression_knee = {} outside (0, 1]", self.compression_knee));
        }
        for (name, &s) in &self.si_category_scale {
            if schema.index_of(name).is_none() {
                return Err(TelemetryError::UnknownCategory(name.clone()));
            }
            if !unit(s) {
                return bad(format!("si_category_scale[{name}] = {s} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn category_scale(&self, schema: &TaskSchema, idx: usize) -> f64 {
        self.si_category_scale
            .get(schema.name(idx))
            .copied()
            .unwrap_or(1.0)
    }
}

/// Laplace-smoothed probability that a query of the category is informative.
pub fn informativeness_rate(m: u32, k: u32) -> Result<f64, TelemetryError> {
    if k > m {
        return Err(TelemetryError::CountInvariantViolated { m, k });
    }
    Ok(rate(m, k))
}

fn rate(m: u32, k: u32) -> f64 {
    (k as f64 + 1.0) / (m as f64 + 2.0)
}

/// 1 − ‖e_i‖ / (max_j ‖e_j‖ + ε_e).
pub fn semantic_deficit(
    traces: &[Vec<f64>],
    schema: &TaskSchema,
    category: &str,
    eps_e: f64,
) -> Result<f64, TelemetryError> {
    let idx = schema
        .index_of(category)
        .ok_or_else(|| TelemetryError::UnknownCategory(category.to_string()))?;
    if traces.len() != schema.len() {
        return Err(TelemetryError::MalformedTranscript(format!(
            "{} traces for {} categories",
            traces.len(),
            schema.len()
        )));
    }
    let norms: Vec<f64> = traces.iter().map(|t| crate::embeddings::l2_norm(t)).collect();
    Ok(deficit_from_norms(&norms, idx, eps_e))
}

fn deficit_from_norms(norms: &[f64], idx: usize, eps_e: f64) -> f64 {
    let max = norms.iter().copied().fold(0.0, f64::max);
    (1.0 - norms[idx] / (max + eps_e)).clamp(0.0, 1.0)
}

/// Binary entropy in bits with 0·log 0 = 0.
pub fn binary_entropy(p: f64) -> Result<f64, TelemetryError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TelemetryError::OutOfRange(p));
    }
    Ok(entropy_bits(p))
}

fn entropy_bits(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    // Evaluating both terms from p and 1 - p in a fixed order keeps
    // H(p) == H(1 - p) bit-for-bit.
    let (a, b) = if p <= 0.5 { (p, 1.0 - p) } else { (1.0 - p, p) };
    term(a) + term(b)
}

/// D(Δυ; λ) = 1 − min(1, λ·Δυ).
pub fn gain_dampening(delta: f64, lambda: f64) -> f64 {
    1.0 - (lambda * delta.max(0.0)).min(1.0)
}

/// Repetition fraction of the window, dampened by the most repeated category's latest gain.
pub fn discrete_stall(r_max: usize, window: usize, recent_gain: f64, lambda: f64) -> f64 {
    let frac = r_max.saturating_sub(1) as f64 / window as f64;
    frac.min(1.0) * gain_dampening(recent_gain, lambda)
}

/// Semantic stall score of one repeated category from its trace cosine.
pub fn semantic_stall(cos: f64, recent_gain: f64, lambda: f64, scale: f64) -> f64 {
    ((1.0 + cos) / 2.0).clamp(0.0, 1.0) * gain_dampening(recent_gain, lambda) * scale
}

/// Identity up to the knee, then a tanh roll-off that stays below 1.
pub fn compress(si: f64, knee: f64) -> f64 {
    if si <= knee {
        si
    } else {
        let span = 1.0 - knee;
        knee + span * ((si - knee) / span).tanh()
    }
}

pub fn blend(si_disc: f64, si_sem: f64, beta: f64, knee: f64) -> f64 {
    compress(beta * si_disc + (1.0 - beta) * si_sem, knee).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StallBreakdown {
    pub si: f64,
    pub si_disc: f64,
    pub si_sem: f64,
    /// Categories queried at least r_min times in the window, schema order.
    pub repeated: Vec<usize>,
}

pub fn stalling_index(state: &HybridState, schema: &TaskSchema, cfg: &TelemetryConfig) -> StallBreakdown {
    let counts = state.window_counts();
    let r_max = counts.iter().copied().max().unwrap_or(0);
    // Dampen by the latest gain of the category that sets r_max (the most
    // recently asked one on ties), so a repeated category that keeps paying
    // off cannot register as repetition.
    let last_gain = state
        .window()
        .rev()
        .filter_map(|r| r.target.category())
        .find(|&i| counts[i] == r_max)
        .and_then(|i| state.recent_gain(i))
        .unwrap_or(0.0);
    let si_disc = discrete_stall(r_max, cfg.window, last_gain, cfg.lambda);

    let repeated: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] >= cfg.r_min).collect();
    let mut sem_sum = 0.0;
    for &i in &repeated {
        let cur = state.trace(i);
        let cos = match state.prev_trace(i) {
            Some(prev) => {
                let denom = state.trace_norms()[i] * crate::embeddings::l2_norm(prev) + cfg.eps_cos;
                dot(cur, prev) / denom
            }
            None => 0.0,
        };
        let gain = state.recent_gain(i).unwrap_or(0.0);
        sem_sum += semantic_stall(cos, gain, cfg.lambda, cfg.category_scale(schema, i));
    }
    let si_sem = if repeated.is_empty() {
        0.0
    } else {
        sem_sum / repeated.len() as f64
    };
    StallBreakdown {
        si: blend(si_disc, si_sem, cfg.beta(), cfg.compression_knee),
        si_disc,
        si_sem,
        repeated,
    }
}

/// Per-category PE for the configured variant, plus the entropy vector.
pub fn progress_estimate(state: &HybridState, schema: &TaskSchema, cfg: &TelemetryConfig) -> Vec<f64> {
    progress_estimate_variant(state, schema, cfg, cfg.pe_variant)
}

pub fn progress_estimate_variant(
    state: &HybridState,
    schema: &TaskSchema,
    cfg: &TelemetryConfig,
    variant: PeVariant,
) -> Vec<f64> {
    let u = state.completeness();
    let norms = state.trace_norms();
    (0..schema.len())
        .map(|i| {
            let rho = rate(state.queries()[i], state.informative()[i]);
            let psi = deficit_from_norms(norms, i, cfg.eps_e);
            let residual = match variant {
                PeVariant::Heuristic => 1.0 - u[i],
                PeVariant::Formal => entropy_bits(u[i]),
            };
            let inner = cfg.alpha * rho * residual + (1.0 - cfg.alpha) * psi;
            inner * schema.weight(i) * schema.gate_at(i, u)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryFrame {
    pub turn: usize,
    pub pe: Vec<f64>,
    pub entropy: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub si: f64,
    pub si_disc: f64,
    pub si_sem: f64,
    pub repeated: Vec<usize>,
    pub stall_flag: bool,
}

/// Telemetry of the current (post-update) state.
pub fn frame(state: &HybridState, schema: &TaskSchema, cfg: &TelemetryConfig) -> TelemetryFrame {
    let sb = stalling_index(state, schema, cfg);
    let turn = state.turn();
    TelemetryFrame {
        turn,
        pe: progress_estimate(state, schema, cfg),
        entropy: state.completeness().iter().map(|&p| entropy_bits(p)).collect(),
        upsilon: state.completeness().to_vec(),
        stall_flag: turn >= cfg.window && sb.si > cfg.theta,
        si: sb.si,
        si_disc: sb.si_disc,
        si_sem: sb.si_sem,
        repeated: sb.repeated,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StallWindow {
    pub start: usize,
    pub end: usize,
    pub peak_si: f64,
    pub peak_turn: usize,
    /// Union of repeated categories over the run.
    pub categories: Vec<usize>,
}

impl StallWindow {
    pub fn contains(&self, turn: usize) -> bool {
        (self.start..=self.end).contains(&turn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub frames: Vec<TelemetryFrame>,
    pub windows: Vec<StallWindow>,
}

impl MonitorReport {
    pub fn flagged_turns(&self) -> usize {
        self.frames.iter().filter(|f| f.stall_flag).count()
    }

    pub fn mean_si(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.si).sum::<f64>() / self.frames.len() as f64
    }

    /// One line per stall window, e.g. `turns 5-7: category=location, peak SI=0.412`.
    pub fn window_report(&self, schema: &TaskSchema) -> String {
        let mut out = String::new();
        if self.windows.is_empty() {
            out.push_str("no stall windows\n");
        }
        for w in &self.windows {
            let cats: Vec<&str> = w.categories.iter().map(|&i| schema.name(i)).collect();
            let cats = if cats.is_empty() { "-".to_string() } else { cats.join(",") };
            let _ = writeln!(
                out,
                "turns {}-{}: category={}, peak SI={:.3} (turn {})",
                w.start, w.end, cats, w.peak_si, w.peak_turn
            );
        }
        out
    }
}

/// Maximal runs of consecutive flagged frames.
pub fn stall_windows(frames: &[TelemetryFrame]) -> Vec<StallWindow> {
    let mut windows: Vec<StallWindow> = Vec::new();
    let mut open: Option<(StallWindow, BTreeSet<usize>)> = None;
    for f in frames {
        if f.stall_flag {
            let (w, cats) = open.get_or_insert_with(|| {
                (
                    StallWindow {
                        start: f.turn,
                        end: f.turn,
                        peak_si: f.si,
                        peak_turn: f.turn,
                        categories: Vec::new(),
                    },
                    BTreeSet::new(),
                )
            });
            w.end = f.turn;
            if f.si > w.peak_si {
                w.peak_si = f.si;
                w.peak_turn = f.turn;
            }
            cats.extend(f.repeated.iter().copied());
        } else if let Some((mut w, cats)) = open.take() {
            w.categories = cats.into_iter().collect();
            windows.push(w);
        }
    }
    if let Some((mut w, cats)) = open.take() {
        w.categories = cats.into_iter().collect();
        windows.push(w);
    }
    windows
}

/// Replays a transcript from a fresh state and emits one frame per turn.
pub fn monitor(
    transcript: &[TurnRecord],
    schema: &TaskSchema,
    cfg: &TelemetryConfig,
) -> Result<MonitorReport, TelemetryError> {
    cfg.validate(schema)?;
    let Some(first) = transcript.first() else {
        return Ok(MonitorReport {
            frames: Vec::new(),
            windows: Vec::new(),
        });
    };
    let mut state = HybridState::new(schema, first.answer_embedding.dimension(), cfg.window);
    let mut frames = Vec::with_capacity(transcript.len());
    for record in transcript {
        state
            .apply_turn(record.clone(), cfg.eps_upsilon)
            .map_err(|e| match e {
                StateError::TurnOutOfOrder { current, got } => TelemetryError::MalformedTranscript(format!(
                    "expected turn {}, found turn {got}",
                    current + 1
                )),
                other => TelemetryError::MalformedTranscript(format!("turn {}: {other}", record.turn)),
            })?;
        frames.push(frame(&state, schema, cfg));
    }
    let windows = stall_windows(&frames);
    Ok(MonitorReport { frames, windows })
}

pub fn csv_header(schema: &TaskSchema) -> String {
    let mut cols = vec![
        "turn".to_string(),
        "si".into(),
        "si_disc".into(),
        "si_sem".into(),
        "stall_flag".into(),
    ];
    for prefix in ["pe", "upsilon", "entropy"] {
        cols.extend(schema.names().map(|n| format!("{prefix}_{n}")));
    }
    cols.join(",")
}

pub fn csv_row(f: &TelemetryFrame) -> String {
    let mut row = format!(
        "{},{:.6},{:.6},{:.6},{}",
        f.turn,
        f.si,
        f.si_disc,
        f.si_sem,
        u8::from(f.stall_flag)
    );
    for v in f.pe.iter().chain(&f.upsilon).chain(&f.entropy) {
        let _ = write!(row, ",{v:.6}");
    }
    row
}

pub fn write_frames_csv<W: io::Write>(mut out: W, schema: &TaskSchema, frames: &[TelemetryFrame]) -> io::Result<()> {
    writeln!(out, "{}", csv_header(schema))?;
    for f in frames {
        writeln!(out, "{}", csv_row(f))?;
    }
    Ok(())
}
