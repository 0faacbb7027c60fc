//! Cooperative environments behind one episodic contract.
//!
//! Every agent receives a partial observation; the centralized critic sees the
//! global state, which extends the stacked observations with ground truth.
//! All agents share one reward.

mod ccn;
mod pp;

pub use ccn::{CcnConfig, CcnLayout, CoopNav, CCN_ACTIONS};
pub use pp::{PpConfig, PredatorPrey, PP_ACTIONS};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::SimRng;

pub type Observation = Vec<f64>;
pub type JointObservation = Vec<Observation>;

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub observations: JointObservation,
    pub reward: f64,
    /// The task was completed on this step.
    pub done: bool,
    /// The step budget ran out before completion.
    pub truncated: bool,
    pub steps_elapsed: usize,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

/// Ground-truth annotations attached to an agent's broadcast, for message analysis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLabel {
    pub prey_visible: bool,
    /// Quadrant of the prey relative to the agent (0: +x+y, 1: -x+y, 2: +x-y, 3: -x-y); only when visible.
    pub prey_quadrant: Option<u8>,
    /// Quadrant of the grid holding the agent, same encoding around the grid center.
    pub agent_quadrant: u8,
}

pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn max_steps(&self) -> usize;

    fn reset(&mut self, rng: &mut SimRng) -> Result<(Vec<f64>, JointObservation)>;
    fn step(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<StepResult>;
    fn observe(&self, agent: usize) -> Result<Observation>;
    fn global_state(&self) -> Vec<f64>;
    fn steps_elapsed(&self) -> usize;

    fn joint_observation(&self) -> JointObservation {
        (0..self.n_agents())
            .map(|i| self.observe(i).expect("agent index in range"))
            .collect()
    }

    fn message_label(&self, _agent: usize) -> Option<MessageLabel> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Pp(PpConfig),
    Ccn(CcnConfig),
}

impl EnvConfig {
    pub fn pp() -> Self {
        EnvConfig::Pp(PpConfig::default())
    }

    pub fn ccn() -> Self {
        EnvConfig::Ccn(CcnConfig::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Pp(_) => "pp",
            EnvConfig::Ccn(_) => "ccn",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Pp(c) => Box::new(PredatorPrey::new(c.clone())?),
            EnvConfig::Ccn(c) => Box::new(CoopNav::new(c.clone())?),
        })
    }

    pub fn n_agents(&self) -> usize {
        match self {
            EnvConfig::Pp(c) => c.view_sizes.len(),
            EnvConfig::Ccn(_) => 2,
        }
    }

    pub fn max_steps(&self) -> usize {
        match self {
            EnvConfig::Pp(c) => c.max_steps,
            EnvConfig::Ccn(c) => c.max_steps,
        }
    }
}
