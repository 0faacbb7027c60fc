use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, JointObservation, MessageLabel, Observation, StepResult};
use crate::error::{Error, Result};
use crate::SimRng;

/// up, down, left, right, stay as `(dx, dy)`; `y` grows downward.
pub const PP_ACTIONS: [(i32, i32); 5] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpConfig {
    pub grid_size: usize,
    /// Side of each predator's centered square view; one entry per predator.
    pub view_sizes: Vec<usize>,
    pub step_penalty: f64,
    pub capture_bonus: f64,
    pub max_steps: usize,
}

impl Default for PpConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            view_sizes: vec![5, 3, 3, 3],
            step_penalty: -0.01,
            capture_bonus: 1.0,
            max_steps: 1000,
        }
    }
}

impl PpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::config("env.grid_size", "grid must be at least 2x2"));
        }
        if self.view_sizes.is_empty() {
            return Err(Error::config("env.view_sizes", "need at least one predator"));
        }
        if let Some(v) = self.view_sizes.iter().find(|&&v| v % 2 == 0) {
            return Err(Error::config("env.view_sizes", format!("view size {v} is not odd")));
        }
        if self.view_sizes.len() + 1 > self.grid_size * self.grid_size {
            return Err(Error::config(
                "env.view_sizes",
                format!(
                    "{} predators and a prey do not fit on a {g}x{g} grid",
                    self.view_sizes.len(),
                    g = self.grid_size
                ),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps", "must be >= 1"));
        }
        Ok(())
    }
}

type Pos = (i32, i32);

/// Predators chasing a randomly moving prey on a square grid. The episode ends
/// once every predator has the prey inside its view window.
#[derive(Clone, Debug)]
pub struct PredatorPrey {
    config: PpConfig,
    predators: Vec<Pos>,
    prey: Pos,
    steps: usize,
    over: bool,
}

impl PredatorPrey {
    pub fn new(config: PpConfig) -> Result<Self> {
        config.validate()?;
        let n = config.view_sizes.len();
        Ok(Self {
            config,
            predators: vec![(0, 0); n],
            prey: (0, 0),
            steps: 0,
            over: true,
        })
    }

    pub fn config(&self) -> &PpConfig {
        &self.config
    }

    pub fn predators(&self) -> &[Pos] {
        &self.predators
    }

    pub fn prey(&self) -> Pos {
        self.prey
    }

    /// Place entities directly; used by tests and trace tooling.
    pub fn set_positions(&mut self, predators: &[Pos], prey: Pos) -> Result<()> {
        if predators.len() != self.predators.len() {
            return Err(Error::dims("predator positions", self.predators.len(), predators.len()));
        }
        let g = self.config.grid_size as i32;
        let inside = |p: &Pos| (0..g).contains(&p.0) && (0..g).contains(&p.1);
        if !predators.iter().all(inside) || !inside(&prey) {
            return Err(Error::InvalidArgument("position outside the grid".into()));
        }
        self.predators = predators.to_vec();
        self.prey = prey;
        self.steps = 0;
        self.over = false;
        Ok(())
    }

    /// Whether the prey lies in `agent`'s view window.
    pub fn sees_prey(&self, agent: usize) -> bool {
        let r = (self.config.view_sizes[agent] / 2) as i32;
        let (px, py) = self.predators[agent];
        (self.prey.0 - px).abs() <= r && (self.prey.1 - py).abs() <= r
    }

    pub fn all_see_prey(&self) -> bool {
        (0..self.predators.len()).all(|i| self.sees_prey(i))
    }

    fn clamp_move(&self, p: Pos, action: usize) -> Pos {
        let (dx, dy) = PP_ACTIONS[action];
        let hi = self.config.grid_size as i32 - 1;
        ((p.0 + dx).clamp(0, hi), (p.1 + dy).clamp(0, hi))
    }

    fn norm_pos(&self, v: i32) -> f64 {
        v as f64 / (self.config.grid_size - 1) as f64
    }

    fn quadrant(dx: i32, dy: i32) -> u8 {
        (dx < 0) as u8 + 2 * (dy < 0) as u8
    }
}

impl Environment for PredatorPrey {
    fn n_agents(&self) -> usize {
        self.predators.len()
    }

    fn obs_dim(&self) -> usize {
        5
    }

    fn state_dim(&self) -> usize {
        5 * self.predators.len() + 2
    }

    fn n_actions(&self) -> usize {
        PP_ACTIONS.len()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn reset(&mut self, rng: &mut SimRng) -> Result<(Vec<f64>, JointObservation)> {
        let g = self.config.grid_size;
        let cells = g * g;
        let n = self.predators.len();
        let picks = rand::seq::index::sample(rng, cells, n + 1);
        let to_pos = |c: usize| ((c % g) as i32, (c / g) as i32);
        for (i, c) in picks.iter().take(n).enumerate() {
            self.predators[i] = to_pos(c);
        }
        self.prey = to_pos(picks.index(n));
        self.steps = 0;
        self.over = false;
        Ok((self.global_state(), self.joint_observation()))
    }

    fn step(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<StepResult> {
        if self.over {
            return Err(Error::EpisodeDone);
        }
        if actions.len() != self.predators.len() {
            return Err(Error::dims("joint action", self.predators.len(), actions.len()));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= PP_ACTIONS.len()) {
            return Err(Error::InvalidArgument(format!("action id {a} out of range")));
        }
        for (i, &a) in actions.iter().enumerate() {
            self.predators[i] = self.clamp_move(self.predators[i], a);
        }
        let prey_action = rng.random_range(0..PP_ACTIONS.len());
        self.prey = self.clamp_move(self.prey, prey_action);
        self.steps += 1;

        let done = self.all_see_prey();
        let truncated = !done && self.steps >= self.config.max_steps;
        self.over = done || truncated;
        let mut reward = self.config.step_penalty;
        if done {
            reward += self.config.capture_bonus;
        }
        Ok(StepResult {
            state: self.global_state(),
            observations: self.joint_observation(),
            reward,
            done,
            truncated,
            steps_elapsed: self.steps,
        })
    }

    fn observe(&self, agent: usize) -> Result<Observation> {
        if agent >= self.predators.len() {
            return Err(Error::InvalidArgument(format!("agent index {agent} out of range")));
        }
        let (x, y) = self.predators[agent];
        let g = self.config.grid_size as f64;
        let mut obs = vec![self.norm_pos(x), self.norm_pos(y), 0.0, 0.0, 0.0];
        if self.sees_prey(agent) {
            obs[2] = (self.prey.0 - x) as f64 / g;
            obs[3] = (self.prey.1 - y) as f64 / g;
            obs[4] = 1.0;
        }
        Ok(obs)
    }

    fn global_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.state_dim());
        for i in 0..self.predators.len() {
            s.extend(self.observe(i).expect("index in range"));
        }
        s.push(self.norm_pos(self.prey.0));
        s.push(self.norm_pos(self.prey.1));
        s
    }

    fn steps_elapsed(&self) -> usize {
        self.steps
    }

    fn message_label(&self, agent: usize) -> Option<MessageLabel> {
        let (x, y) = *self.predators.get(agent)?;
        let visible = self.sees_prey(agent);
        // Twice the coordinate against the grid span keeps the center exact for odd sizes.
        let span = self.config.grid_size as i32 - 1;
        Some(MessageLabel {
            prey_visible: visible,
            prey_quadrant: visible.then(|| Self::quadrant(self.prey.0 - x, self.prey.1 - y)),
            agent_quadrant: Self::quadrant(2 * x - span, 2 * y - span),
        })
    }
}
