//! Centralized training of the scheduled-communication actors.
//!
//! Each environment step the trainer
//! 1. computes every agent's scheduling weight (plus exploration noise),
//! 2. turns the weights into a schedule with the configured [`Wsa`],
//! 3. broadcasts the scheduled agents' messages and samples actions,
//! 4. stores the transition and, once the buffer holds a minibatch, runs
//!    the critic regression, the policy-gradient update of encoders and
//!    action selectors, the deterministic policy-gradient update of the
//!    weight generators, and soft target updates.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::actor::{self, explore_weight, ActionMode, ActorDims};
use crate::critic::CriticParams;
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nn::{adam_step, soft_update, AdamState};
use crate::wsa::{ScheduleProfile, Wsa};
use crate::{AgentActor, Mlp, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub training_steps: u64,
    pub episode_length: usize,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Learning rate of the weight generators; `None` uses `lr_actor`.
    pub lr_weight_gen: Option<f64>,
    pub tau: f64,
    pub entropy_weight: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Std-dev of the weight exploration noise at the start of training.
    pub wg_noise_start: f64,
    /// Noise level reached after `wg_noise_anneal_fraction` of training.
    pub wg_noise_end: f64,
    pub wg_noise_anneal_fraction: f64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_fraction: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            training_steps: 750_000,
            episode_length: 1000,
            gamma: 0.9,
            lr_actor: 1e-5,
            lr_critic: 1e-4,
            lr_weight_gen: None,
            tau: 0.05,
            entropy_weight: 0.01,
            buffer_capacity: 100_000,
            batch_size: 64,
            wg_noise_start: 0.1,
            wg_noise_end: 0.01,
            wg_noise_anneal_fraction: 0.5,
            eval_interval: 10_000,
            eval_episodes: 100,
            final_eval_episodes: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.2,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("hyperparameters.{field}"), msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", "must lie in [0, 1]");
        }
        if self.lr_actor < 0.0 || self.lr_critic < 0.0 || self.lr_weight_gen.is_some_and(|lr| lr < 0.0) {
            return bad("lr_actor", "learning rates must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity", "must hold at least one minibatch");
        }
        if self.episode_length == 0 {
            return bad("episode_length", "must be >= 1");
        }
        if self.eval_episodes == 0 || self.final_eval_episodes == 0 {
            return bad("eval_episodes", "must be >= 1");
        }
        Ok(())
    }

    /// Linear anneal from `start` to `end` over the first `fraction` of training.
    pub(crate) fn anneal(&self, start: f64, end: f64, fraction: f64, step: u64) -> f64 {
        let horizon = fraction * self.training_steps as f64;
        if horizon <= 0.0 {
            return end;
        }
        let progress = step as f64 / horizon;
        if progress >= 1.0 {
            return end;
        }
        start + (end - start) * progress
    }

    pub fn wg_noise(&self, step: u64) -> f64 {
        self.anneal(self.wg_noise_start, self.wg_noise_end, self.wg_noise_anneal_fraction, step)
    }

    pub fn weight_gen_lr(&self) -> f64 {
        self.lr_weight_gen.unwrap_or(self.lr_actor)
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        self.anneal(self.epsilon_start, self.epsilon_end, self.epsilon_anneal_fraction, step)
    }
}

/// One replay record. Observations are stored agent-major in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub schedule: ScheduleProfile,
    pub weights: Vec<f64>,
    /// Terminal: no bootstrapping from `next_state`.
    pub done: bool,
}

impl Transition {
    pub fn agent_obs(&self, agent: usize, obs_dim: usize) -> &[f64] {
        &self.obs[agent * obs_dim..(agent + 1) * obs_dim]
    }

    pub fn agent_next_obs(&self, agent: usize, obs_dim: usize) -> &[f64] {
        &self.next_obs[agent * obs_dim..(agent + 1) * obs_dim]
    }
}

/// Bounded FIFO replay memory with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

pub(crate) fn gather<'a, F>(batch: &[&'a Transition], f: F) -> Vec<f64>
where
    F: Fn(&'a Transition) -> &'a [f64],
{
    let mut out = Vec::new();
    for t in batch {
        out.extend_from_slice(f(t));
    }
    out
}

/// Shapes and scheduling setup shared by every network of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub wsa: Wsa,
    pub k: usize,
    pub msg_len: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    /// Append the schedule profile `c` to every broadcast so receivers know who spoke.
    #[serde(default)]
    pub sender_ids: bool,
}

impl ModelConfig {
    pub fn for_env(
        env: &dyn Environment,
        wsa: Wsa,
        k: usize,
        msg_len: usize,
        actor_hidden: usize,
        critic_hidden: usize,
    ) -> Result<Self> {
        let cfg = Self {
            n_agents: env.n_agents(),
            obs_dim: env.obs_dim(),
            state_dim: env.state_dim(),
            n_actions: env.n_actions(),
            wsa,
            k,
            msg_len,
            actor_hidden,
            critic_hidden,
            sender_ids: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n_agents {
            return Err(Error::config(
                "k",
                format!("k = {} must satisfy 1 <= k <= n = {}", self.k, self.n_agents),
            ));
        }
        if self.msg_len == 0 {
            return Err(Error::config("l", "message length must be >= 1"));
        }
        Ok(())
    }

    pub fn scheduled(&self) -> usize {
        self.wsa.scheduled_count(self.n_agents, self.k)
    }

    pub fn actor_dims(&self) -> ActorDims {
        ActorDims {
            obs_dim: self.obs_dim,
            n_actions: self.n_actions,
            msg_len: self.msg_len,
            scheduled: self.scheduled(),
            hidden: self.actor_hidden,
            sender_ids: if self.sender_ids { self.n_agents } else { 0 },
        }
    }
}

/// Seed of the evaluation stream used at training step `step`.
pub fn eval_seed(seed: u64, step: u64) -> u64 {
    derive_seed(derive_seed(seed, 3), step)
}

/// SplitMix64, used to derive independent sub-seeds from one master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub encoder: Vec<AdamState<f64>>,
    pub selector: Vec<AdamState<f64>>,
    pub weight_gen: Vec<AdamState<f64>>,
    pub critic_trunk: AdamState<f64>,
    pub critic_v: AdamState<f64>,
    pub critic_q: AdamState<f64>,
}

/// All learnable state of a run: actors, critic and their target copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedNet {
    pub config: ModelConfig,
    pub actors: Vec<AgentActor>,
    pub target_weight_gens: Vec<Mlp>,
    pub critic: CriticParams<f64>,
    pub target_critic: CriticParams<f64>,
    pub optim: Optimizers,
}

/// One scheduling decision and the broadcast it produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub weights: Vec<f64>,
    pub schedule: ScheduleProfile,
    pub messages: Vec<Vec<f64>>,
    pub broadcast: Vec<f64>,
    pub actions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorDiagnostics {
    pub mean_entropy: f64,
    pub mean_advantage: f64,
}

impl SchedNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = config.actor_dims();
        let actors = (0..config.n_agents)
            .map(|i| AgentActor::new(dims, derive_seed(seed, 100 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let critic = CriticParams::new(
            config.state_dim,
            config.n_agents,
            config.critic_hidden,
            derive_seed(seed, 1),
        )?;
        Ok(Self::assemble(config, actors, critic))
    }

    /// Rebuilds a model from trained networks; targets start as copies and
    /// optimizer moments at zero.
    pub fn from_parts(config: ModelConfig, actors: Vec<AgentActor>, critic: CriticParams<f64>) -> Result<Self> {
        config.validate()?;
        let dims = config.actor_dims();
        if actors.len() != config.n_agents || actors.iter().any(|a| a.dims != dims) {
            return Err(Error::InvalidArgument("actor shapes do not match the model config".into()));
        }
        if critic.state_dim() != config.state_dim
            || critic.n_agents != config.n_agents
            || critic.hidden() != config.critic_hidden
        {
            return Err(Error::InvalidArgument("critic shape does not match the model config".into()));
        }
        Ok(Self::assemble(config, actors, critic))
    }

    /// All parameters zero; handy for checking update mechanics.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.actor_dims();
        let actors = (0..config.n_agents)
            .map(|_| AgentActor::zeros(dims))
            .collect::<Result<Vec<_>>>()?;
        let critic = CriticParams::zeros(config.state_dim, config.n_agents, config.critic_hidden)?;
        Ok(Self::assemble(config, actors, critic))
    }

    fn assemble(config: ModelConfig, actors: Vec<AgentActor>, critic: CriticParams<f64>) -> Self {
        let optim = Optimizers {
            encoder: actors.iter().map(|a| AdamState::new(a.encoder.params.len())).collect(),
            selector: actors.iter().map(|a| AdamState::new(a.selector.params.len())).collect(),
            weight_gen: actors.iter().map(|a| AdamState::new(a.weight_gen.params.len())).collect(),
            critic_trunk: AdamState::new(critic.trunk.params.len()),
            critic_v: AdamState::new(critic.v_head.params.len()),
            critic_q: AdamState::new(critic.q_head.params.len()),
        };
        Self {
            target_weight_gens: actors.iter().map(|a| a.weight_gen.clone()).collect(),
            target_critic: critic.clone(),
            config,
            actors,
            critic,
            optim,
        }
    }

    /// Runs weight generation, scheduling, broadcast and action selection for one step.
    pub fn decide(
        &self,
        obs: &[Vec<f64>],
        t: u64,
        noise_sigma: f64,
        mode: ActionMode,
        rng: &mut SimRng,
    ) -> Result<Decision> {
        let n = self.config.n_agents;
        if obs.len() != n {
            return Err(Error::dims("joint observation", n, obs.len()));
        }
        let mut weights = Vec::with_capacity(n);
        for (a, o) in self.actors.iter().zip(obs) {
            let w = a.generate_weight(o)?;
            weights.push(explore_weight(w, noise_sigma, rng));
        }
        let schedule = self.config.wsa.schedule(&weights, self.config.k, t, rng)?;
        let mut messages = vec![Vec::new(); n];
        for i in schedule.scheduled() {
            messages[i] = self.actors[i].encode(&obs[i])?;
        }
        for (i, m) in messages.iter_mut().enumerate() {
            if m.is_empty() {
                *m = vec![0.0; self.config.msg_len];
                if mode == ActionMode::Greedy {
                    // Unscheduled messages never leave the agent; computed only for traces.
                    *m = self.actors[i].encode(&obs[i])?;
                }
            }
        }
        let mut broadcast = actor::aggregate(&messages, &schedule, self.config.scheduled())?;
        if self.config.sender_ids {
            broadcast.extend(schedule.as_bools().iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
        let actions = self
            .actors
            .iter()
            .zip(obs)
            .map(|(a, o)| a.select_action(o, &broadcast, rng, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(Decision {
            weights,
            schedule,
            messages,
            broadcast,
            actions,
        })
    }

    /// Regresses `V` and `Q` onto one-step targets built from the target networks.
    pub fn critic_update(&mut self, batch: &[&Transition], gamma: f64, lr: f64) -> Result<f64> {
        let size = batch.len();
        if size == 0 {
            return Err(Error::InvalidArgument("critic update needs a non-empty batch".into()));
        }
        let n = self.config.n_agents;
        let od = self.config.obs_dim;

        let next_states = gather(batch, |t| &t.next_state);
        let mut target_w = vec![0.0; size * n];
        for (i, wg) in self.target_weight_gens.iter().enumerate() {
            let o = gather(batch, |t| t.agent_next_obs(i, od));
            let cache = wg.forward_batch(&o, size)?;
            for (b, &w) in cache.output().iter().enumerate() {
                target_w[b * n + i] = w;
            }
        }
        let v_next = self.target_critic.value_batch(&next_states, size)?;
        let q_next = self.target_critic.q_batch(&next_states, &target_w, size)?;
        let mut y = Vec::with_capacity(size);
        let mut y_hat = Vec::with_capacity(size);
        for (b, t) in batch.iter().enumerate() {
            let cont = if t.done { 0.0 } else { gamma };
            y.push(t.reward + cont * v_next[b]);
            y_hat.push(t.reward + cont * q_next[b]);
        }

        let states = gather(batch, |t| &t.state);
        let weights = gather(batch, |t| &t.weights);
        let mut grads = self.critic.zero_grads();
        let scale = 1.0 / size as f64;
        let loss = self.critic.backprop_with(&states, &weights, size, &mut grads, |v, q| {
            let mut loss = 0.0;
            let mut dv = Vec::with_capacity(size);
            let mut dq = Vec::with_capacity(size);
            for b in 0..size {
                let ev = y[b] - v[b];
                let eq = y_hat[b] - q[b];
                loss += ev * ev + eq * eq;
                dv.push(-2.0 * ev * scale);
                dq.push(-2.0 * eq * scale);
            }
            (loss * scale, dv, dq)
        })?;
        adam_step(&mut self.critic.trunk.params, &grads.trunk, &mut self.optim.critic_trunk, lr)?;
        adam_step(&mut self.critic.v_head.params, &grads.v_head, &mut self.optim.critic_v, lr)?;
        adam_step(&mut self.critic.q_head.params, &grads.q_head, &mut self.optim.critic_q, lr)?;
        Ok(loss)
    }

    /// TD-error advantages `r + gamma V(s') - V(s)` under the current critic.
    pub fn advantages(&self, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
        let size = batch.len();
        let v = self.critic.value_batch(&gather(batch, |t| &t.state), size)?;
        let v_next = self.critic.value_batch(&gather(batch, |t| &t.next_state), size)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(b, t)| {
                let cont = if t.done { 0.0 } else { gamma };
                t.reward + cont * v_next[b] - v[b]
            })
            .collect())
    }

    /// Policy-gradient ascent for encoders and action selectors.
    pub fn actor_update(
        &mut self,
        batch: &[&Transition],
        gamma: f64,
        lr: f64,
        entropy_weight: f64,
    ) -> Result<ActorDiagnostics> {
        let advantages = self.advantages(batch, gamma)?;
        self.actor_update_with_advantages(batch, &advantages, lr, entropy_weight)
    }

    /// [`Self::actor_update`] with caller-supplied advantages.
    pub fn actor_update_with_advantages(
        &mut self,
        batch: &[&Transition],
        advantages: &[f64],
        lr: f64,
        entropy_weight: f64,
    ) -> Result<ActorDiagnostics> {
        let size = batch.len();
        if size == 0 {
            return Ok(ActorDiagnostics::default());
        }
        if advantages.len() != size {
            return Err(Error::dims("advantages", size, advantages.len()));
        }
        let n = self.config.n_agents;
        let od = self.config.obs_dim;
        let l = self.config.msg_len;
        let slots = self.config.scheduled();
        let agg_len = self.config.actor_dims().agg_len();

        let obs: Vec<Vec<f64>> = (0..n).map(|i| gather(batch, |t| t.agent_obs(i, od))).collect();

        // Messages of every agent on every sampled observation.
        let mut enc_caches = Vec::with_capacity(n);
        for (i, a) in self.actors.iter().enumerate() {
            enc_caches.push(a.encoder.forward_batch(&obs[i], size)?);
        }
        // senders[b][slot] = agent whose message fills that slot of row b.
        let mut senders = Vec::with_capacity(size);
        let mut agg = Vec::with_capacity(size * agg_len);
        for (b, t) in batch.iter().enumerate() {
            let row: Vec<usize> = t.schedule.scheduled().collect();
            if row.len() != slots {
                return Err(Error::dims("scheduled senders", slots, row.len()));
            }
            for &j in &row {
                let m = &enc_caches[j].output()[b * l..(b + 1) * l];
                agg.extend(m.iter().map(|&x| actor::quantize(x)));
            }
            if self.config.sender_ids {
                agg.extend(t.schedule.as_bools().iter().map(|&b| if b { 1.0 } else { 0.0 }));
            }
            senders.push(row);
        }

        let scale = 1.0 / size as f64;
        let mut enc_out_grads = vec![vec![0.0; size * l]; n];
        let mut sel_grads = Vec::with_capacity(n);
        let mut entropy_sum = 0.0;
        let in_dim = od + agg_len;
        let n_act = self.config.n_actions;
        for i in 0..n {
            let mut input = Vec::with_capacity(size * in_dim);
            for b in 0..size {
                input.extend_from_slice(&obs[i][b * od..(b + 1) * od]);
                input.extend_from_slice(&agg[b * agg_len..(b + 1) * agg_len]);
            }
            let sel = &self.actors[i].selector;
            let cache = sel.forward_batch(&input, size)?;
            let probs = cache.output();
            // Descent direction of -(A log pi(u) + beta H(pi)) / S with respect to pi.
            let mut dprobs = vec![0.0; size * n_act];
            for b in 0..size {
                let p = &probs[b * n_act..(b + 1) * n_act];
                let g = &mut dprobs[b * n_act..(b + 1) * n_act];
                let u = batch[b].actions[i];
                let mut h = 0.0;
                for a in 0..n_act {
                    let lp = p[a].max(f64::MIN_POSITIVE).ln();
                    h -= p[a] * lp;
                    g[a] = entropy_weight * (lp + 1.0) * scale;
                }
                entropy_sum += h;
                g[u] -= advantages[b] / p[u].max(f64::MIN_POSITIVE) * scale;
            }
            let mut grads = sel.zero_grad();
            let dinput = sel.backward_into(cache, &dprobs, &mut grads)?;
            for b in 0..size {
                let row = &dinput[b * in_dim + od..(b + 1) * in_dim];
                for (slot, &j) in senders[b].iter().enumerate() {
                    // Quantization passes gradients straight through.
                    let dst = &mut enc_out_grads[j][b * l..(b + 1) * l];
                    for (d, &g) in dst.iter_mut().zip(&row[slot * l..(slot + 1) * l]) {
                        *d += g;
                    }
                }
            }
            sel_grads.push(grads);
        }

        for (j, cache) in enc_caches.into_iter().enumerate() {
            let enc = &self.actors[j].encoder;
            let mut grads = enc.zero_grad();
            enc.backward_into(cache, &enc_out_grads[j], &mut grads)?;
            adam_step(&mut self.actors[j].encoder.params, &grads, &mut self.optim.encoder[j], lr)?;
        }
        for (i, grads) in sel_grads.into_iter().enumerate() {
            adam_step(&mut self.actors[i].selector.params, &grads, &mut self.optim.selector[i], lr)?;
        }
        Ok(ActorDiagnostics {
            mean_entropy: entropy_sum / (size * n) as f64,
            mean_advantage: advantages.iter().sum::<f64>() * scale,
        })
    }

    /// Deterministic policy-gradient ascent of `Q(s, mu(o))` for the weight generators.
    pub fn wg_update(&mut self, batch: &[&Transition], lr: f64) -> Result<f64> {
        let size = batch.len();
        if size == 0 {
            return Ok(0.0);
        }
        let n = self.config.n_agents;
        let od = self.config.obs_dim;
        let mut caches = Vec::with_capacity(n);
        let mut w = vec![0.0; size * n];
        for (i, a) in self.actors.iter().enumerate() {
            let o = gather(batch, |t| t.agent_obs(i, od));
            let cache = a.weight_gen.forward_batch(&o, size)?;
            for (b, &x) in cache.output().iter().enumerate() {
                w[b * n + i] = x;
            }
            caches.push(cache);
        }
        let states = gather(batch, |t| &t.state);
        let scale = 1.0 / size as f64;
        let (q, dw) = self.critic.q_and_weight_grad(&states, &w, size, -scale)?;
        for (i, cache) in caches.into_iter().enumerate() {
            let column: Vec<f64> = (0..size).map(|b| dw[b * n + i]).collect();
            let wg = &self.actors[i].weight_gen;
            let mut grads = wg.zero_grad();
            wg.backward_into(cache, &column, &mut grads)?;
            adam_step(&mut self.actors[i].weight_gen.params, &grads, &mut self.optim.weight_gen[i], lr)?;
        }
        Ok(q.iter().sum::<f64>() * scale)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        for (target, a) in self.target_weight_gens.iter_mut().zip(&self.actors) {
            soft_update(&mut target.params, &a.weight_gen.params, tau)?;
        }
        soft_update(&mut self.target_critic.trunk.params, &self.critic.trunk.params, tau)?;
        soft_update(&mut self.target_critic.v_head.params, &self.critic.v_head.params, tau)?;
        soft_update(&mut self.target_critic.q_head.params, &self.critic.q_head.params, tau)?;
        Ok(())
    }
}

/// Greedy, noise-free evaluation outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_steps: f64,
    pub ci95: f64,
    pub episodes: usize,
}

impl EvalSummary {
    /// Normal-approximation 95% interval over per-episode lengths.
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let n = lengths.len();
        let mean = lengths.iter().sum::<usize>() as f64 / n.max(1) as f64;
        let ci95 = if n < 2 {
            0.0
        } else {
            let var = lengths.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        };
        Self {
            mean_steps: mean,
            ci95,
            episodes: n,
        }
    }
}

/// Something that can drive every agent of an environment for one step.
pub trait JointPolicy {
    /// Greedy joint action at medium slot `t`. The slot clock runs across
    /// episode boundaries; only round-robin scheduling reads it.
    fn act_greedy(&self, obs: &[Vec<f64>], t: u64, rng: &mut SimRng) -> Result<Vec<usize>>;
}

impl JointPolicy for SchedNet {
    fn act_greedy(&self, obs: &[Vec<f64>], t: u64, rng: &mut SimRng) -> Result<Vec<usize>> {
        Ok(self.decide(obs, t, 0.0, ActionMode::Greedy, rng)?.actions)
    }
}

/// Mean episode length of `policy` over `episodes` fresh episodes.
pub fn evaluate_policy<P: JointPolicy + ?Sized>(
    policy: &P,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut env = env_config.build()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut lengths = Vec::with_capacity(episodes);
    let mut slot = 0u64;
    for _ in 0..episodes {
        let (_, mut obs) = env.reset(&mut rng)?;
        loop {
            let actions = policy.act_greedy(&obs, slot, &mut rng)?;
            slot += 1;
            let r = env.step(&actions, &mut rng)?;
            if r.episode_over() {
                lengths.push(r.steps_elapsed);
                break;
            }
            obs = r.observations;
        }
    }
    Ok(EvalSummary::from_lengths(&lengths))
}

/// One point of a learning curve, written as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub version: u32,
    pub algo: String,
    pub step: u64,
    pub eval_mean_steps: f64,
    pub eval_ci: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

#[derive(Default)]
pub(crate) struct RunningMean {
    sum: f64,
    count: u64,
}

impl RunningMean {
    pub fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    pub fn take(&mut self) -> f64 {
        let m = if self.count == 0 { 0.0 } else { self.sum / self.count as f64 };
        *self = Self::default();
        m
    }
}

/// Drives one training run of the scheduled-communication model.
pub struct Trainer {
    pub model: SchedNet,
    pub hp: Hyperparameters,
    pub env_config: EnvConfig,
    pub buffer: ReplayBuffer,
    env: Box<dyn Environment>,
    rng: SimRng,
    seed: u64,
    step: u64,
    obs: Option<Vec<Vec<f64>>>,
    state: Vec<f64>,
}

impl Trainer {
    pub fn new(model: SchedNet, env_config: EnvConfig, hp: Hyperparameters, seed: u64) -> Result<Self> {
        hp.validate()?;
        let env = env_config.build()?;
        if env.n_agents() != model.config.n_agents
            || env.obs_dim() != model.config.obs_dim
            || env.state_dim() != model.config.state_dim
        {
            return Err(Error::InvalidArgument("model shapes do not match the environment".into()));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(hp.buffer_capacity),
            rng: SimRng::seed_from_u64(derive_seed(seed, 2)),
            env,
            env_config,
            model,
            hp,
            seed,
            step: 0,
            obs: None,
            state: Vec::new(),
        })
    }

    /// Acts once in the environment with exploration and stores the transition.
    pub fn collect_step(&mut self) -> Result<Transition> {
        let obs = match self.obs.take() {
            Some(o) => o,
            None => {
                let (s, o) = self.env.reset(&mut self.rng)?;
                self.state = s;
                o
            }
        };
        let sigma = self.hp.wg_noise(self.step);
        let d = self.model.decide(&obs, self.step, sigma, ActionMode::Sample, &mut self.rng)?;
        let r = self.env.step(&d.actions, &mut self.rng)?;
        let transition = Transition {
            state: std::mem::take(&mut self.state),
            obs: obs.concat(),
            actions: d.actions,
            reward: r.reward,
            next_state: r.state.clone(),
            next_obs: r.observations.concat(),
            schedule: d.schedule,
            weights: d.weights,
            done: r.done,
        };
        if r.episode_over() {
            self.obs = None;
        } else {
            self.state = r.state;
            self.obs = Some(r.observations);
        }
        self.buffer.push(transition.clone());
        self.step += 1;
        Ok(transition)
    }

    /// Runs the three updates on one minibatch followed by the target updates.
    pub fn update(&mut self) -> Result<Option<(f64, ActorDiagnostics)>> {
        if self.buffer.len() < self.hp.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.hp.batch_size, &mut self.rng);
        let hp = &self.hp;
        let loss = self.model.critic_update(&batch, hp.gamma, hp.lr_critic)?;
        let diag = self.model.actor_update(&batch, hp.gamma, hp.lr_actor, hp.entropy_weight)?;
        self.model.wg_update(&batch, hp.weight_gen_lr())?;
        self.model.soft_update_targets(hp.tau)?;
        Ok(Some((loss, diag)))
    }

    pub fn evaluate(&self, episodes: usize) -> Result<EvalSummary> {
        evaluate_policy(&self.model, &self.env_config, episodes, eval_seed(self.seed, self.step))
    }

}

/// A training run that advances one environment step at a time.
pub trait Learner {
    fn algo(&self) -> &'static str;
    fn hyperparameters(&self) -> &Hyperparameters;
    fn steps_done(&self) -> u64;
    /// One environment step plus, when the buffer allows, one round of updates.
    /// Returns `(loss, entropy)` diagnostics when updates ran.
    fn train_step(&mut self) -> Result<Option<(f64, f64)>>;
    /// Greedy evaluation at the current parameters.
    fn evaluate(&self, episodes: usize) -> Result<EvalSummary>;
}

/// Trains until `training_steps`, reporting an evaluation point at the start
/// and every `eval_interval` steps (and at the end).
pub fn run_learner<L, F>(learner: &mut L, mut on_point: F) -> Result<Vec<CurvePoint>>
where
    L: Learner + ?Sized,
    F: FnMut(&CurvePoint) -> Result<()>,
{
    let hp = learner.hyperparameters().clone();
    let mut loss = RunningMean::default();
    let mut entropy = RunningMean::default();
    let mut curve = Vec::new();
    let mut emit = |learner: &L, loss: &mut RunningMean, entropy: &mut RunningMean| -> Result<()> {
        let eval = learner.evaluate(hp.eval_episodes)?;
        let p = CurvePoint {
            version: CURVE_VERSION,
            algo: learner.algo().into(),
            step: learner.steps_done(),
            eval_mean_steps: eval.mean_steps,
            eval_ci: eval.ci95,
            critic_loss: loss.take(),
            entropy: entropy.take(),
        };
        on_point(&p)?;
        curve.push(p);
        Ok(())
    };
    emit(learner, &mut loss, &mut entropy)?;
    while learner.steps_done() < hp.training_steps {
        if let Some((l, h)) = learner.train_step()? {
            loss.add(l);
            entropy.add(h);
        }
        let step = learner.steps_done();
        if step % hp.eval_interval.max(1) == 0 || step == hp.training_steps {
            emit(learner, &mut loss, &mut entropy)?;
        }
    }
    Ok(curve)
}

pub const CURVE_VERSION: u32 = 1;

impl Learner for Trainer {
    fn algo(&self) -> &'static str {
        "schednet"
    }

    fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    fn steps_done(&self) -> u64 {
        self.step
    }

    fn train_step(&mut self) -> Result<Option<(f64, f64)>> {
        self.collect_step()?;
        Ok(self.update()?.map(|(loss, d)| (loss, d.mean_entropy)))
    }

    fn evaluate(&self, episodes: usize) -> Result<EvalSummary> {
        Trainer::evaluate(self, episodes)
    }
}
