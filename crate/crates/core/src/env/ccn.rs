use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, JointObservation, Observation, StepResult};
use crate::error::{Error, Result};
use crate::SimRng;

/// left, right, stay.
pub const CCN_ACTIONS: [i32; 3] = [-1, 1, 0];

/// How each episode places agents and destinations. Every layout keeps the
/// configured start-to-destination distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcnLayout {
    /// The configured cells every episode. Solvable open-loop, without communication.
    Fixed,
    /// Each agent's line is independently mirrored with probability 1/2, so
    /// neither agent can tell which way to walk without being told.
    #[default]
    Mirrored,
    /// Each agent's (start, destination) pair drawn uniformly among all pairs
    /// on the line at the configured distance.
    Shifted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcnConfig {
    pub length: usize,
    pub starts: [usize; 2],
    pub destinations: [usize; 2],
    pub layout: CcnLayout,
    pub step_penalty: f64,
    pub capture_bonus: f64,
    pub max_steps: usize,
}

impl Default for CcnConfig {
    fn default() -> Self {
        Self {
            length: 16,
            starts: [5, 13],
            destinations: [9, 3],
            layout: CcnLayout::default(),
            step_penalty: -0.01,
            capture_bonus: 1.0,
            max_steps: 1000,
        }
    }
}

impl CcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::config("env.length", "line must hold at least 2 cells"));
        }
        for (name, cells) in [("env.starts", self.starts), ("env.destinations", self.destinations)] {
            if cells.iter().any(|&c| c >= self.length) {
                return Err(Error::config(name, format!("cell outside a line of length {}", self.length)));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Two agents, each on its own 1-D line, who can only see the other agent.
#[derive(Clone, Debug)]
pub struct CoopNav {
    config: CcnConfig,
    pos: [usize; 2],
    dest: [usize; 2],
    steps: usize,
    over: bool,
}

impl CoopNav {
    pub fn new(config: CcnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            pos: config.starts,
            dest: config.destinations,
            config,
            steps: 0,
            over: true,
        })
    }

    pub fn positions(&self) -> [usize; 2] {
        self.pos
    }

    pub fn set_positions(&mut self, pos: [usize; 2]) -> Result<()> {
        if pos.iter().any(|&p| p >= self.config.length) {
            return Err(Error::InvalidArgument("position outside the line".into()));
        }
        self.pos = pos;
        self.steps = 0;
        self.over = false;
        Ok(())
    }

    pub fn destinations(&self) -> [usize; 2] {
        self.dest
    }

    pub fn set_destinations(&mut self, dest: [usize; 2]) -> Result<()> {
        if dest.iter().any(|&p| p >= self.config.length) {
            return Err(Error::InvalidArgument("destination outside the line".into()));
        }
        self.dest = dest;
        Ok(())
    }

    pub fn arrived(&self, agent: usize) -> bool {
        self.pos[agent] == self.dest[agent]
    }

    pub fn distance_to_goal(&self, agent: usize) -> usize {
        self.pos[agent].abs_diff(self.dest[agent])
    }

    /// Every `(start, destination)` pair on the line at distance `d`.
    fn layouts(&self, d: usize) -> Vec<(usize, usize)> {
        let len = self.config.length;
        let mut out = Vec::new();
        for dest in 0..len {
            if dest + d < len {
                out.push((dest + d, dest));
            }
            if d > 0 && dest >= d {
                out.push((dest - d, dest));
            }
        }
        out
    }

    fn norm(&self, cell: usize) -> f64 {
        cell as f64 / (self.config.length - 1) as f64
    }
}

impl Environment for CoopNav {
    fn n_agents(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn state_dim(&self) -> usize {
        8
    }

    fn n_actions(&self) -> usize {
        CCN_ACTIONS.len()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn reset(&mut self, rng: &mut SimRng) -> Result<(Vec<f64>, JointObservation)> {
        self.pos = self.config.starts;
        self.dest = self.config.destinations;
        let last = self.config.length - 1;
        for i in 0..2 {
            match self.config.layout {
                CcnLayout::Fixed => {}
                CcnLayout::Mirrored => {
                    if rng.random_bool(0.5) {
                        self.pos[i] = last - self.pos[i];
                        self.dest[i] = last - self.dest[i];
                    }
                }
                CcnLayout::Shifted => {
                    let d = self.config.starts[i].abs_diff(self.config.destinations[i]);
                    let &(start, dest) = self.layouts(d).choose(rng).expect("configured layout fits");
                    self.pos[i] = start;
                    self.dest[i] = dest;
                }
            }
        }
        self.steps = 0;
        self.over = false;
        Ok((self.global_state(), self.joint_observation()))
    }

    fn step(&mut self, actions: &[usize], _rng: &mut SimRng) -> Result<StepResult> {
        if self.over {
            return Err(Error::EpisodeDone);
        }
        if actions.len() != 2 {
            return Err(Error::dims("joint action", 2, actions.len()));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= CCN_ACTIONS.len()) {
            return Err(Error::InvalidArgument(format!("action id {a} out of range")));
        }
        let hi = self.config.length as i64 - 1;
        for (p, &a) in self.pos.iter_mut().zip(actions) {
            *p = (*p as i64 + CCN_ACTIONS[a] as i64).clamp(0, hi) as usize;
        }
        self.steps += 1;
        let done = self.arrived(0) && self.arrived(1);
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

    /// The other agent's position, destination and arrival flag; never the agent's own.
    fn observe(&self, agent: usize) -> Result<Observation> {
        if agent >= 2 {
            return Err(Error::InvalidArgument(format!("agent index {agent} out of range")));
        }
        let other = 1 - agent;
        Ok(vec![
            self.norm(self.pos[other]),
            self.norm(self.dest[other]),
            if self.arrived(other) { 1.0 } else { 0.0 },
        ])
    }

    fn global_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(8);
        s.extend(self.observe(0).expect("agent 0"));
        s.extend(self.observe(1).expect("agent 1"));
        s.push(self.norm(self.pos[0]));
        s.push(self.norm(self.pos[1]));
        s
    }

    fn steps_elapsed(&self) -> usize {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fixed() -> CcnConfig {
        CcnConfig {
            layout: CcnLayout::Fixed,
            ..CcnConfig::default()
        }
    }

    #[test]
    fn default_start_puts_agent_two_farther() {
        let mut e = CoopNav::new(fixed()).unwrap();
        e.reset(&mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(e.positions(), [5, 13]);
        assert_eq!(e.distance_to_goal(0), 4);
        assert_eq!(e.distance_to_goal(1), 10);
    }

    #[test]
    fn mirrored_layouts_flip_each_line_independently() {
        let mut e = CoopNav::new(CcnConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            e.reset(&mut rng).unwrap();
            let (p, d) = (e.positions(), e.destinations());
            assert!(p == [5, 13] || p == [10, 13] || p == [5, 2] || p == [10, 2]);
            assert_eq!(d[0], if p[0] == 5 { 9 } else { 6 });
            assert_eq!(d[1], if p[1] == 13 { 3 } else { 12 });
            seen.insert(p);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn shifted_layouts_keep_distances() {
        let shifted = CcnConfig {
            layout: CcnLayout::Shifted,
            ..CcnConfig::default()
        };
        let mut e = CoopNav::new(shifted.clone()).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let mut sides = std::collections::HashSet::new();
        let mut dests = std::collections::HashSet::new();
        for _ in 0..500 {
            e.reset(&mut rng).unwrap();
            assert_eq!(e.distance_to_goal(0), 4);
            assert_eq!(e.distance_to_goal(1), 10);
            assert!(e.positions().iter().chain(&e.destinations()).all(|&c| c < 16));
            sides.insert(e.positions()[1] > e.destinations()[1]);
            dests.insert(e.destinations()[0]);
        }
        assert_eq!(sides.len(), 2);
        assert_eq!(dests.len(), 16);
        let mut a = CoopNav::new(shifted.clone()).unwrap();
        let mut b = CoopNav::new(shifted).unwrap();
        let (sa, _) = a.reset(&mut SimRng::seed_from_u64(7)).unwrap();
        let (sb, _) = b.reset(&mut SimRng::seed_from_u64(7)).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn own_position_is_not_observed() {
        let mut e = CoopNav::new(CcnConfig::default()).unwrap();
        e.set_positions([2, 7]).unwrap();
        let before = e.observe(0).unwrap();
        e.set_positions([11, 7]).unwrap();
        assert_eq!(e.observe(0).unwrap(), before);
        assert_ne!(e.observe(1).unwrap(), before);
    }

    #[test]
    fn completion_pays_joint_bonus() {
        let mut e = CoopNav::new(fixed()).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        e.set_positions([8, 3]).unwrap();
        let r = e.step(&[1, 2], &mut rng).unwrap();
        assert!(r.done);
        assert!((r.reward - 0.99).abs() < 1e-12);
    }

    #[test]
    fn clamped_at_line_ends() {
        let mut e = CoopNav::new(CcnConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        e.set_positions([0, 15]).unwrap();
        e.step(&[0, 1], &mut rng).unwrap();
        assert_eq!(e.positions(), [0, 15]);
    }

    #[test]
    fn bad_config_and_action_rejected() {
        let cfg = CcnConfig {
            starts: [3, 40],
            ..CcnConfig::default()
        };
        assert!(CoopNav::new(cfg).is_err());
        let mut e = CoopNav::new(CcnConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        e.reset(&mut rng).unwrap();
        assert!(e.step(&[0, 3], &mut rng).is_err());
    }
}
