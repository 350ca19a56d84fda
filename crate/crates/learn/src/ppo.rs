//! Clipped-surrogate actor-critic with GAE.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::LearnerConfig;
use crate::nn::{clip_global_norm, log_softmax, Adam, Cache, Mlp};

/// Separate policy and value networks, each with two tanh hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new<R: Rng>(obs_dim: usize, n_actions: usize, hidden: usize, rng: &mut R) -> Self {
        let g = 2f64.sqrt();
        ActorCritic {
            actor: Mlp::new(&[obs_dim, hidden, hidden, n_actions], g, 0.01, rng),
            critic: Mlp::new(&[obs_dim, hidden, hidden, 1], g, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn probabilities(&self, obs: &[f64]) -> Vec<f64> {
        let mut lp = Vec::new();
        log_softmax(&self.actor.predict(obs), &mut lp);
        lp.iter().map(|l| l.exp()).collect()
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.predict(obs)[0]
    }

    pub fn greedy(&self, obs: &[f64]) -> usize {
        argmax(&self.actor.predict(obs))
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from log-probabilities by inverse CDF on one uniform.
pub fn sample_categorical<R: Rng>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

/// One rollout of on-policy experience, stored row-major.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// True when the episode ended on this step.
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn new(obs_dim: usize) -> Self {
        Rollout { obs_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn push(&mut self, obs: &[f64], action: usize, log_prob: f64, value: f64, reward: f64, done: bool) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.obs.extend_from_slice(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    /// Fills advantages and returns. `last_value` bootstraps a rollout that
    /// ends mid-episode.
    pub fn finish(&mut self, last_value: f64, gamma: f64, lambda: f64) {
        let (adv, ret) = gae(&self.rewards, &self.values, &self.dones, last_value, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Generalized advantage estimation. Episode ends are terminal: nothing is
/// bootstrapped across them.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_v, live) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], 1.0)
        } else {
            (last_value, 1.0)
        };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Inputs of the clipped surrogate over a set of samples.
pub struct SurrogateBatch<'a> {
    pub obs_dim: usize,
    pub obs: &'a [f64],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
}

/// Mean clipped surrogate objective, minus nothing: larger is better.
pub fn surrogate(actor: &Mlp, b: &SurrogateBatch<'_>, clip: f64) -> f64 {
    let mut cache = Cache::default();
    let mut lp = Vec::new();
    let n = b.actions.len();
    let mut total = 0.0;
    for i in 0..n {
        actor.forward(&b.obs[i * b.obs_dim..(i + 1) * b.obs_dim], &mut cache);
        log_softmax(cache.output(), &mut lp);
        let ratio = (lp[b.actions[i]] - b.old_log_probs[i]).exp();
        let a = b.advantages[i];
        total += f64::min(ratio * a, ratio.clamp(1.0 - clip, 1.0 + clip) * a);
    }
    total / n as f64
}

/// Policy loss `-(surrogate) - ent_coef * entropy` and its gradient with
/// respect to the actor parameters, accumulated into `grad`. Returns the
/// loss and the mean entropy.
pub fn policy_loss_grad(actor: &Mlp, b: &SurrogateBatch<'_>, clip: f64, ent_coef: f64, grad: &mut [f64]) -> (f64, f64) {
    let mut cache = Cache::default();
    let mut lp = Vec::new();
    let mut d_logits = Vec::new();
    let mut scratch = Vec::new();
    let n = b.actions.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut ent_total = 0.0;
    for i in 0..n {
        actor.forward(&b.obs[i * b.obs_dim..(i + 1) * b.obs_dim], &mut cache);
        log_softmax(cache.output(), &mut lp);
        let act = b.actions[i];
        let ratio = (lp[act] - b.old_log_probs[i]).exp();
        let a = b.advantages[i];
        let s1 = ratio * a;
        let s2 = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        loss -= s1.min(s2);
        // The gradient flows only through the unclipped branch.
        let d_lp = if s1 <= s2 { -a * ratio } else { 0.0 };
        let entropy: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
        ent_total += entropy;
        loss -= ent_coef * entropy;
        d_logits.clear();
        for (j, l) in lp.iter().enumerate() {
            let p = l.exp();
            let onehot = if j == act { 1.0 } else { 0.0 };
            // d(-ent_coef * H)/dz_j = ent_coef * p_j * (log p_j + H)
            let d = d_lp * (onehot - p) + ent_coef * p * (l + entropy);
            d_logits.push(d * inv_n);
        }
        actor.backward(&cache, &d_logits, grad, &mut scratch);
    }
    (loss * inv_n, ent_total * inv_n)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Learner state: network, optimizers and reusable buffers.
#[derive(Debug, Clone)]
pub struct Ppo {
    pub net: ActorCritic,
    cfg: LearnerConfig,
    opt_actor: Adam,
    opt_critic: Adam,
    g_actor: Vec<f64>,
    g_critic: Vec<f64>,
}

impl Ppo {
    pub fn new(net: ActorCritic, cfg: LearnerConfig) -> Self {
        let na = net.actor.params().len();
        let nc = net.critic.params().len();
        Ppo {
            opt_actor: Adam::new(na, cfg.learning_rate),
            opt_critic: Adam::new(nc, cfg.learning_rate),
            g_actor: vec![0.0; na],
            g_critic: vec![0.0; nc],
            net,
            cfg,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    /// Runs the configured number of epochs of shuffled minibatch updates.
    pub fn update<R: Rng>(&mut self, batch: &Rollout, rng: &mut R) -> UpdateStats {
        let n = batch.len();
        let d = batch.obs_dim;
        let mb = self.cfg.minibatch_size.min(n).max(1);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let mut updates = 0usize;

        let mut obs = Vec::with_capacity(mb * d);
        let mut actions = Vec::with_capacity(mb);
        let mut old = Vec::with_capacity(mb);
        let mut adv = Vec::with_capacity(mb);
        let mut ret = Vec::with_capacity(mb);
        let mut cache = Cache::default();
        let mut scratch = Vec::new();

        for _ in 0..self.cfg.epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(mb) {
                obs.clear();
                actions.clear();
                old.clear();
                adv.clear();
                ret.clear();
                for &i in chunk {
                    obs.extend_from_slice(batch.observation(i));
                    actions.push(batch.actions[i]);
                    old.push(batch.log_probs[i]);
                    adv.push(batch.advantages[i]);
                    ret.push(batch.returns[i]);
                }
                if self.cfg.normalize_advantages {
                    normalize(&mut adv);
                }
                self.g_actor.iter_mut().for_each(|g| *g = 0.0);
                self.g_critic.iter_mut().for_each(|g| *g = 0.0);

                let sb = SurrogateBatch { obs_dim: d, obs: &obs, actions: &actions, old_log_probs: &old, advantages: &adv };
                let (pl, ent) = policy_loss_grad(&self.net.actor, &sb, self.cfg.clip_ratio, self.cfg.ent_coef, &mut self.g_actor);

                let k = chunk.len() as f64;
                let mut vl = 0.0;
                for (j, r) in ret.iter().enumerate() {
                    self.net.critic.forward(&obs[j * d..(j + 1) * d], &mut cache);
                    let diff = cache.output()[0] - r;
                    vl += diff * diff;
                    let dv = [self.cfg.vf_coef * 2.0 * diff / k];
                    self.net.critic.backward(&cache, &dv, &mut self.g_critic, &mut scratch);
                }

                clip_global_norm(&mut [&mut self.g_actor, &mut self.g_critic], self.cfg.max_grad_norm);
                self.opt_actor.step(self.net.actor.params_mut(), &self.g_actor);
                self.opt_critic.step(self.net.critic.params_mut(), &self.g_critic);

                stats.policy_loss += pl;
                stats.value_loss += vl / k;
                stats.entropy += ent;
                updates += 1;
            }
        }
        if updates > 0 {
            let u = updates as f64;
            stats.policy_loss /= u;
            stats.value_loss /= u;
            stats.entropy /= u;
        }
        stats.clip_fraction = self.clip_fraction(batch);
        stats
    }

    fn clip_fraction(&self, batch: &Rollout) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let mut lp = Vec::new();
        let mut cache = Cache::default();
        let mut clipped = 0usize;
        for i in 0..batch.len() {
            self.net.actor.forward(batch.observation(i), &mut cache);
            log_softmax(cache.output(), &mut lp);
            let r = (lp[batch.actions[i]] - batch.log_probs[i]).exp();
            if (r - 1.0).abs() > self.cfg.clip_ratio {
                clipped += 1;
            }
        }
        clipped as f64 / batch.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_matches_hand_computation() {
        // Two steps, terminal at the second: A1 = r1 - v1, A0 = d0 + g*l*A1.
        let (adv, ret) = gae(&[1.0, 2.0], &[0.5, 0.25], &[false, true], 9.0, 0.9, 0.8);
        let a1 = 2.0 - 0.25;
        let d0 = 1.0 + 0.9 * 0.25 - 0.5;
        assert!((adv[1] - a1).abs() < 1e-12);
        assert!((adv[0] - (d0 + 0.72 * a1)).abs() < 1e-12);
        assert!((ret[0] - (adv[0] + 0.5)).abs() < 1e-12);
        // Non-terminal tail bootstraps from last_value.
        let (adv, _) = gae(&[0.0], &[0.0], &[false], 2.0, 0.5, 1.0);
        assert_eq!(adv[0], 1.0);
    }

    #[test]
    fn gae_does_not_leak_across_episode_ends() {
        let (a, _) = gae(&[0.0, 100.0], &[0.0, 0.0], &[true, true], 0.0, 0.99, 0.95);
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp: Vec<f64> = [0.1f64, 0.6, 0.3].iter().map(|p| p.ln()).collect();
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[sample_categorical(&lp, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.1, 0.6, 0.3]) {
            assert!((*c as f64 / 30_000.0 - p).abs() < 0.01);
        }
    }

    #[test]
    fn policy_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ActorCritic::new(18, 47, 64, &mut rng);
        for k in 0..20 {
            let obs: Vec<f64> = (0..18).map(|i| ((i * 7 + k * 3) % 11) as f64 / 10.0).collect();
            let p = net.probabilities(&obs);
            assert_eq!(p.len(), 47);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
