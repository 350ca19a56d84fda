use serde::{Deserialize, Serialize};

use crate::env::{RewardSpec, Variant};
use crate::LearnError;

/// Learner hyperparameters plus the reward constants. Every field can be
/// overridden from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub total_timesteps: usize,
    pub runs: usize,
    pub gamma: f64,
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub hidden: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
    /// Per-turn cost charged to every variant.
    pub c_step: f64,
    /// Bonus for resolving every category.
    pub b_term: f64,
    /// Stall penalty weight for `full_dt`; the other variants use 0.
    pub kappa: f64,
    /// Gaussian smoothing width, in evaluation windows, for report curves.
    pub smoothing_sigma: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            total_timesteps: 50_000,
            runs: 25,
            gamma: 0.99,
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            rollout_steps: 512,
            epochs: 4,
            minibatch_size: 64,
            hidden: 64,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            seed: 0,
            c_step: 0.1,
            b_term: 10.0,
            kappa: 1.0,
            smoothing_sigma: 2.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::ConfigInvalid(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return bad("clip_ratio must be positive");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.rollout_steps == 0 || self.epochs == 0 || self.minibatch_size == 0 || self.hidden == 0 {
            return bad("rollout_steps, epochs, minibatch_size and hidden must be positive");
        }
        if self.total_timesteps == 0 || self.runs == 0 {
            return bad("total_timesteps and runs must be positive");
        }
        if !(self.ent_coef >= 0.0 && self.vf_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("ent_coef, vf_coef must be non-negative and max_grad_norm positive");
        }
        if !(self.smoothing_sigma >= 0.0) {
            return bad("smoothing_sigma must be non-negative");
        }
        self.reward_spec(Variant::FullDt).map(|_| ())
    }

    pub fn reward_spec(&self, variant: Variant) -> Result<RewardSpec, LearnError> {
        let kappa = if variant.si_penalty() { self.kappa } else { 0.0 };
        RewardSpec::new(self.c_step, self.b_term, kappa)
    }

    /// Seed of run `k`: the base seed plus the run index.
    pub fn run_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }
}
