//! A single training run: rollouts, updates and per-episode curves.

use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dt_core::{Condition, Corpus, EpisodeConfig, TelemetryConfig, Termination};

use crate::config::LearnerConfig;
use crate::env::{DialogueEnv, Variant};
use crate::nn::{log_softmax, Cache, Mlp};
use crate::ppo::{sample_categorical, ActorCritic, Ppo, Rollout};
use crate::LearnError;

/// Outcome of one finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Environment steps taken when the episode ended.
    pub timestep: usize,
    /// Index of the rollout (evaluation window) the episode ended in.
    pub window: usize,
    pub reward: f64,
    pub total_knowledge: f64,
    pub complete_categories: usize,
    pub mean_si: f64,
    pub turns: usize,
    pub termination: Termination,
}

/// The four tracked metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub reward: f64,
    pub total_knowledge: f64,
    pub complete_categories: f64,
    pub si: f64,
}

impl Metrics {
    pub fn mean_of(eps: &[EpisodeStats]) -> Metrics {
        if eps.is_empty() {
            return Metrics::default();
        }
        let n = eps.len() as f64;
        Metrics {
            reward: eps.iter().map(|e| e.reward).sum::<f64>() / n,
            total_knowledge: eps.iter().map(|e| e.total_knowledge).sum::<f64>() / n,
            complete_categories: eps.iter().map(|e| e.complete_categories as f64).sum::<f64>() / n,
            si: eps.iter().map(|e| e.mean_si).sum::<f64>() / n,
        }
    }

    fn mean(ms: &[Metrics]) -> Metrics {
        if ms.is_empty() {
            return Metrics::default();
        }
        let n = ms.len() as f64;
        Metrics {
            reward: ms.iter().map(|m| m.reward).sum::<f64>() / n,
            total_knowledge: ms.iter().map(|m| m.total_knowledge).sum::<f64>() / n,
            complete_categories: ms.iter().map(|m| m.complete_categories).sum::<f64>() / n,
            si: ms.iter().map(|m| m.si).sum::<f64>() / n,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "reward" => Some(self.reward),
            "total_knowledge" => Some(self.total_knowledge),
            "complete_categories" => Some(self.complete_categories),
            "si" => Some(self.si),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub condition: Condition,
    pub variant: Variant,
    pub run: usize,
    pub seed: u64,
    pub timesteps: usize,
    pub episodes: usize,
    /// Mean over evaluation windows (rollouts) that finished any episode.
    pub during_training: Metrics,
    /// Mean over the final 10% of episodes.
    pub end_of_training: Metrics,
    pub terminations: TerminationCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationCounts {
    pub all_resolved: usize,
    pub budget_exhausted: usize,
    pub stall_terminated: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub episodes: Vec<EpisodeStats>,
    pub policy: ActorCritic,
}

/// Everything a run needs besides its index.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub corpus: Arc<Corpus>,
    pub telemetry: TelemetryConfig,
    pub episode: EpisodeConfig,
    pub variant: Variant,
    pub learner: LearnerConfig,
}

impl RunSpec {
    pub fn condition(&self) -> Condition {
        self.episode.condition
    }
}

/// Trains one policy from scratch. Deterministic given the spec and run index.
pub fn train_run(spec: &RunSpec, run: usize) -> Result<RunResult, LearnError> {
    let cfg = &spec.learner;
    cfg.validate()?;
    let seed = cfg.run_seed(run);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episode_cfg = spec.episode.clone();
    episode_cfg.seed = seed;
    let mut env = DialogueEnv::new(
        spec.corpus.clone(),
        spec.telemetry.clone(),
        episode_cfg,
        spec.variant,
        cfg.reward_spec(spec.variant)?,
    )?;
    let net = ActorCritic::new(env.obs_dim(), env.num_actions(), cfg.hidden, &mut rng);
    let mut ppo = Ppo::new(net, cfg.clone());

    let mut rollout = Rollout::new(env.obs_dim());
    let mut obs = Vec::with_capacity(env.obs_dim());
    let mut cache = Cache::default();
    let mut lp = Vec::new();
    let mut episodes = Vec::new();
    let mut ep_reward = 0.0;
    let mut steps = 0usize;
    let mut window = 0usize;
    env.observe(&mut obs)?;

    while steps < cfg.total_timesteps {
        rollout.clear();
        let n = cfg.rollout_steps.min(cfg.total_timesteps - steps);
        for _ in 0..n {
            ppo.net.actor.forward(&obs, &mut cache);
            log_softmax(cache.output(), &mut lp);
            let a = sample_categorical(&lp, &mut rng);
            let v = ppo.net.value(&obs);
            let s = env.step(a)?;
            steps += 1;
            ep_reward += s.reward;
            rollout.push(&obs, a, lp[a], v, s.reward, s.done);
            if s.done {
                let t = env.episode().totals();
                episodes.push(EpisodeStats {
                    episode: episodes.len() + 1,
                    timestep: steps,
                    window,
                    reward: ep_reward,
                    total_knowledge: t.total_knowledge,
                    complete_categories: t.complete_categories,
                    mean_si: t.mean_si,
                    turns: t.turns,
                    termination: s.cause.expect("done implies a cause"),
                });
                ep_reward = 0.0;
                env.reset();
            }
            env.observe(&mut obs)?;
        }
        let last_value = ppo.net.value(&obs);
        rollout.finish(last_value, cfg.gamma, cfg.gae_lambda);
        ppo.update(&rollout, &mut rng);
        window += 1;
    }

    let summary = summarize(spec, run, seed, steps, &episodes);
    Ok(RunResult { summary, episodes, policy: ppo.net })
}

fn summarize(spec: &RunSpec, run: usize, seed: u64, steps: usize, episodes: &[EpisodeStats]) -> RunSummary {
    let mut windows: Vec<Metrics> = Vec::new();
    let mut start = 0;
    while start < episodes.len() {
        let w = episodes[start].window;
        let end = start + episodes[start..].iter().take_while(|e| e.window == w).count();
        windows.push(Metrics::mean_of(&episodes[start..end]));
        start = end;
    }
    let tail = end_of_training_slice(episodes);
    let mut terms = TerminationCounts::default();
    for e in episodes {
        match e.termination {
            Termination::AllResolved => terms.all_resolved += 1,
            Termination::BudgetExhausted => terms.budget_exhausted += 1,
            Termination::StallTerminated => terms.stall_terminated += 1,
        }
    }
    RunSummary {
        condition: spec.condition(),
        variant: spec.variant,
        run,
        seed,
        timesteps: steps,
        episodes: episodes.len(),
        during_training: Metrics::mean(&windows),
        end_of_training: Metrics::mean_of(tail),
        terminations: terms,
    }
}

/// The final 10% of episodes, at least one.
pub fn end_of_training_slice(episodes: &[EpisodeStats]) -> &[EpisodeStats] {
    let k = episodes.len().div_ceil(10);
    &episodes[episodes.len() - k..]
}

pub const CURVES_HEADER: &str = "episode,timestep,window,reward,total_knowledge,complete_categories,mean_si,turns,termination";

pub fn write_curves_csv<W: Write>(mut out: W, episodes: &[EpisodeStats]) -> io::Result<()> {
    writeln!(out, "{CURVES_HEADER}")?;
    for e in episodes {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{:.6},{},{}",
            e.episode, e.timestep, e.window, e.reward, e.total_knowledge, e.complete_categories, e.mean_si, e.turns, e.termination
        )?;
    }
    Ok(())
}

pub fn read_curves_csv(text: &str) -> Result<Vec<EpisodeStats>, LearnError> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_HEADER) {
        return Err(LearnError::Corrupt("curves.csv header mismatch".into()));
    }
    let bad = |i: usize| LearnError::Corrupt(format!("curves.csv line {}", i + 2));
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(i));
            }
            let termination = match f[8] {
                "all_resolved" => Termination::AllResolved,
                "budget_exhausted" => Termination::BudgetExhausted,
                "stall_terminated" => Termination::StallTerminated,
                _ => return Err(bad(i)),
            };
            Ok(EpisodeStats {
                episode: f[0].parse().map_err(|_| bad(i))?,
                timestep: f[1].parse().map_err(|_| bad(i))?,
                window: f[2].parse().map_err(|_| bad(i))?,
                reward: f[3].parse().map_err(|_| bad(i))?,
                total_knowledge: f[4].parse().map_err(|_| bad(i))?,
                complete_categories: f[5].parse().map_err(|_| bad(i))?,
                mean_si: f[6].parse().map_err(|_| bad(i))?,
                turns: f[7].parse().map_err(|_| bad(i))?,
                termination,
            })
        })
        .collect()
}

const POLICY_MAGIC: &[u8; 8] = b"DTPOLICY";

/// Binary policy file: magic, then for actor and critic a u32 layer count,
/// u32 sizes and little-endian f64 parameters.
pub fn write_policy<W: Write>(mut out: W, net: &ActorCritic) -> io::Result<()> {
    out.write_all(POLICY_MAGIC)?;
    for m in [&net.actor, &net.critic] {
        out.write_all(&(m.sizes().len() as u32).to_le_bytes())?;
        for &s in m.sizes() {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in m.params() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_policy<R: Read>(mut input: R) -> Result<ActorCritic, LearnError> {
    let corrupt = |m: &str| LearnError::Corrupt(format!("policy file: {m}"));
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| LearnError::Io(e.to_string()))?;
    if bytes.len() < 8 || &bytes[..8] != POLICY_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8], LearnError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    let mut nets = Vec::new();
    for _ in 0..2 {
        let layers = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if !(2..=16).contains(&layers) {
            return Err(corrupt("layer count"));
        }
        let mut sizes = Vec::with_capacity(layers);
        for _ in 0..layers {
            sizes.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let n = crate::nn::param_count(&sizes);
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        nets.push(Mlp::from_params(&sizes, params).ok_or_else(|| corrupt("shape"))?);
    }
    let critic = nets.pop().unwrap();
    let actor = nets.pop().unwrap();
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(ActorCritic { actor, critic })
}

pub fn load_policy(path: &Path) -> Result<ActorCritic, LearnError> {
    let f = std::fs::File::open(path).map_err(|e| LearnError::Io(format!("{}: {e}", path.display())))?;
    read_policy(io::BufReader::new(f))
}
