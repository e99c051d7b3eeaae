//! Single-step multi-armed bandit, handy for sanity-checking learners.

use crate::error::{Error, Result};
use crate::mdp::{Environment, Observation, StepOutcome};

#[derive(Debug, Clone)]
pub struct Bandit {
    pub arm_rewards: Vec<f64>,
    done: bool,
}

impl Bandit {
    pub fn new(arm_rewards: Vec<f64>) -> Self {
        Self {
            arm_rewards,
            done: true,
        }
    }

    /// Two arms paying 1 and 0.
    pub fn two_armed() -> Self {
        Self::new(vec![1.0, 0.0])
    }
}

impl Environment for Bandit {
    fn n_agents(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn n_actions(&self) -> usize {
        self.arm_rewards.len()
    }
    fn horizon(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Vec<Observation> {
        self.done = false;
        vec![vec![1.0]]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a finished bandit episode".into()));
        }
        self.done = true;
        Ok(StepOutcome {
            observations: vec![vec![1.0]],
            rewards: vec![self.arm_rewards[actions[0]]],
            done: true,
            events: Vec::new(),
        })
    }
}
