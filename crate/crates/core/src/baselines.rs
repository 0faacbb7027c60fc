//! Independent DQN: every agent learns its own Q-network on its own
//! observation and never communicates. Round-robin and full communication
//! are not here; they are the scheduled trainer run with [`crate::wsa::Wsa::RoundRobin`]
//! and [`crate::wsa::Wsa::Full`].

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::actor::argmax;
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nn::{adam_step, soft_update, Activation, AdamState, NetSpec};
use crate::trainer::{
    derive_seed, eval_seed, evaluate_policy, gather, EvalSummary, Hyperparameters, JointPolicy,
    Learner, ReplayBuffer, Transition,
};
use crate::wsa::ScheduleProfile;
use crate::{Mlp, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnAgentParams {
    pub q: Mlp,
    pub target: Mlp,
    pub optim: AdamState<f64>,
}

pub fn dqn_spec(obs_dim: usize, n_actions: usize, hidden: usize) -> Result<NetSpec> {
    NetSpec::new(obs_dim, vec![hidden, hidden], n_actions, Activation::Linear)
}

impl DqnAgentParams {
    pub fn new(obs_dim: usize, n_actions: usize, hidden: usize, seed: u64) -> Result<Self> {
        Ok(Self::from_net(Mlp::new(dqn_spec(obs_dim, n_actions, hidden)?, seed)?))
    }

    pub fn zeros(obs_dim: usize, n_actions: usize, hidden: usize) -> Result<Self> {
        Ok(Self::from_net(Mlp::zeros(dqn_spec(obs_dim, n_actions, hidden)?)?))
    }

    pub fn from_net(q: Mlp) -> Self {
        Self {
            optim: AdamState::new(q.params.len()),
            target: q.clone(),
            q,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.q.spec.input_dim
    }

    pub fn n_actions(&self) -> usize {
        self.q.spec.output_dim
    }
}

/// Epsilon-greedy action; greedy ties go to the lowest action id.
pub fn idqn_act<R: Rng + ?Sized>(
    agent: &DqnAgentParams,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..agent.n_actions()));
    }
    Ok(argmax(&agent.q.infer(obs)?))
}

/// One Adam step on the mean squared TD error of `agent`'s own transitions,
/// then a soft target update with rate `tau`.
pub fn idqn_update(
    agent: &mut DqnAgentParams,
    index: usize,
    batch: &[&Transition],
    gamma: f64,
    lr: f64,
    tau: f64,
) -> Result<f64> {
    let size = batch.len();
    if size == 0 {
        return Err(Error::InvalidArgument("dqn update needs a non-empty batch".into()));
    }
    let od = agent.obs_dim();
    let na = agent.n_actions();
    let next = agent.target.forward_batch(&gather(batch, |t| t.agent_next_obs(index, od)), size)?;
    let cache = agent.q.forward_batch(&gather(batch, |t| t.agent_obs(index, od)), size)?;
    let q = cache.output();
    let scale = 1.0 / size as f64;
    let mut dq = vec![0.0; size * na];
    let mut loss = 0.0;
    for (b, t) in batch.iter().enumerate() {
        let best = next.output()[b * na..(b + 1) * na]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let y = t.reward + if t.done { 0.0 } else { gamma * best };
        let u = t.actions[index];
        let err = q[b * na + u] - y;
        loss += err * err;
        dq[b * na + u] = 2.0 * err * scale;
    }
    let mut grads = agent.q.zero_grad();
    agent.q.backward_into(cache, &dq, &mut grads)?;
    adam_step(&mut agent.q.params, &grads, &mut agent.optim, lr)?;
    soft_update(&mut agent.target.params, &agent.q.params, tau)?;
    Ok(loss * scale)
}

/// The independent learners of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Idqn {
    pub agents: Vec<DqnAgentParams>,
}

impl Idqn {
    pub fn new(n_agents: usize, obs_dim: usize, n_actions: usize, hidden: usize, seed: u64) -> Result<Self> {
        let agents = (0..n_agents)
            .map(|i| DqnAgentParams::new(obs_dim, n_actions, hidden, derive_seed(seed, 200 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { agents })
    }

    pub fn for_env(env: &dyn Environment, hidden: usize, seed: u64) -> Result<Self> {
        Self::new(env.n_agents(), env.obs_dim(), env.n_actions(), hidden, seed)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[Vec<f64>], epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
        if obs.len() != self.agents.len() {
            return Err(Error::dims("joint observation", self.agents.len(), obs.len()));
        }
        self.agents
            .iter()
            .zip(obs)
            .map(|(a, o)| idqn_act(a, o, epsilon, rng))
            .collect()
    }
}

impl JointPolicy for Idqn {
    fn act_greedy(&self, obs: &[Vec<f64>], _t: u64, rng: &mut SimRng) -> Result<Vec<usize>> {
        self.act(obs, 0.0, rng)
    }
}

/// Training loop for [`Idqn`], sharing the replay and evaluation protocol
/// of the scheduled trainer.
pub struct IdqnTrainer {
    pub model: Idqn,
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

impl IdqnTrainer {
    pub fn new(model: Idqn, env_config: EnvConfig, hp: Hyperparameters, seed: u64) -> Result<Self> {
        hp.validate()?;
        let env = env_config.build()?;
        if model.agents.len() != env.n_agents()
            || model.agents.iter().any(|a| a.obs_dim() != env.obs_dim() || a.n_actions() != env.n_actions())
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

    pub fn collect_step(&mut self) -> Result<Transition> {
        let obs = match self.obs.take() {
            Some(o) => o,
            None => {
                let (s, o) = self.env.reset(&mut self.rng)?;
                self.state = s;
                o
            }
        };
        let eps = self.hp.epsilon(self.step);
        let actions = self.model.act(&obs, eps, &mut self.rng)?;
        let r = self.env.step(&actions, &mut self.rng)?;
        let transition = Transition {
            state: std::mem::take(&mut self.state),
            obs: obs.concat(),
            actions,
            reward: r.reward,
            next_state: r.state.clone(),
            next_obs: r.observations.concat(),
            schedule: ScheduleProfile::from_bools(Vec::new()),
            weights: Vec::new(),
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

    /// Updates every agent on one shared minibatch; returns the mean loss.
    pub fn update(&mut self) -> Result<Option<f64>> {
        if self.buffer.len() < self.hp.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.hp.batch_size, &mut self.rng);
        let mut total = 0.0;
        for (i, agent) in self.model.agents.iter_mut().enumerate() {
            total += idqn_update(agent, i, &batch, self.hp.gamma, self.hp.lr_critic, self.hp.tau)?;
        }
        Ok(Some(total / self.model.agents.len() as f64))
    }
}

impl Learner for IdqnTrainer {
    fn algo(&self) -> &'static str {
        "idqn"
    }

    fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    fn steps_done(&self) -> u64 {
        self.step
    }

    fn train_step(&mut self) -> Result<Option<(f64, f64)>> {
        self.collect_step()?;
        // No stochastic policy, so the entropy column stays zero.
        Ok(self.update()?.map(|loss| (loss, 0.0)))
    }

    fn evaluate(&self, episodes: usize) -> Result<EvalSummary> {
        evaluate_policy(&self.model, &self.env_config, episodes, eval_seed(self.seed, self.step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CcnConfig;
    use crate::trainer::run_learner;

    fn transition(reward: f64, done: bool) -> Transition {
        Transition {
            state: vec![0.0; 8],
            obs: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            actions: vec![1, 2],
            reward,
            next_state: vec![0.0; 8],
            next_obs: vec![0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            schedule: ScheduleProfile::from_bools(Vec::new()),
            weights: Vec::new(),
            done,
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let a = DqnAgentParams::new(3, 3, 8, 1).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[idqn_act(&a, &[0.2, 0.5, 0.1], 1.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn greedy_is_deterministic_and_zero_net_picks_first() {
        let a = DqnAgentParams::new(3, 3, 8, 2).unwrap();
        let mut r1 = SimRng::seed_from_u64(1);
        let mut r2 = SimRng::seed_from_u64(99);
        let o = [0.2, 0.5, 0.1];
        assert_eq!(idqn_act(&a, &o, 0.0, &mut r1).unwrap(), idqn_act(&a, &o, 0.0, &mut r2).unwrap());
        let z = DqnAgentParams::zeros(3, 3, 8).unwrap();
        assert_eq!(idqn_act(&z, &o, 0.0, &mut r1).unwrap(), 0);
        assert!(idqn_act(&z, &o, 1.5, &mut r1).is_err());
    }

    #[test]
    fn terminal_loss_with_zero_net() {
        let mut z = DqnAgentParams::zeros(3, 3, 8).unwrap();
        let t = transition(1.0, true);
        assert!((idqn_update(&mut z, 0, &[&t], 0.9, 0.0, 0.05).unwrap() - 1.0).abs() < 1e-12);
        assert!(idqn_update(&mut z, 0, &[], 0.9, 0.0, 0.05).is_err());
    }

    #[test]
    fn regression_on_one_transition() {
        let mut a = DqnAgentParams::new(3, 3, 16, 3).unwrap();
        let t = transition(0.5, true);
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            loss = idqn_update(&mut a, 1, &[&t], 0.9, 1e-3, 0.05).unwrap();
        }
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn agents_are_independent() {
        let mut m = Idqn::new(2, 3, 3, 8, 4).unwrap();
        let other = m.agents[1].clone();
        let t = transition(1.0, false);
        idqn_update(&mut m.agents[0], 0, &[&t], 0.9, 1e-2, 0.05).unwrap();
        assert_eq!(m.agents[1], other);
    }

    #[test]
    fn trainer_runs_and_reproduces() {
        let env = EnvConfig::Ccn(CcnConfig { max_steps: 40, ..CcnConfig::default() });
        let hp = Hyperparameters {
            training_steps: 200,
            batch_size: 8,
            buffer_capacity: 100,
            eval_interval: 100,
            eval_episodes: 2,
            ..Hyperparameters::default()
        };
        let run = || {
            let e = env.build().unwrap();
            let m = Idqn::for_env(e.as_ref(), 8, 5).unwrap();
            let mut tr = IdqnTrainer::new(m, env.clone(), hp.clone(), 5).unwrap();
            let c = run_learner(&mut tr, |_| Ok(())).unwrap();
            (c, tr.model)
        };
        let (c1, m1) = run();
        let (c2, m2) = run();
        assert_eq!(c1.len(), 3);
        assert!(c1.iter().all(|p| p.algo == "idqn"));
        assert_eq!(c1, c2);
        assert_eq!(m1, m2);
    }
}
