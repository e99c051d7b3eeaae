//! 4-Goals: sparse-reward navigation to one of four landmarks.
//!
//! The agent starts at the origin of `[-1, 1]^2` and moves with five discrete
//! actions (four compass moves of `step_size`, plus stay). Touching a landmark
//! pays its reward and ends the episode; otherwise the episode ends after 16
//! steps with nothing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{self, N_ACTIONS};
use crate::error::{Error, Result};
use crate::mdp::{env_rng, EnvEvent, Environment, Observation, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourGoalsMode {
    Easy,
    Medium,
    Hard,
}

pub const EASY_GOALS: [[f64; 2]; 4] = [[0.0, 0.5], [0.5, 0.0], [0.0, -0.5], [-0.5, 0.0]];
pub const HARD_SIZE_SCALE: [f64; 4] = [2.0, 1.0, 0.5, 0.25];
pub const HARD_REWARD_SCALE: [f64; 4] = [1.0, 1.1, 1.2, 1.3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FourGoalsConfig {
    pub mode: FourGoalsMode,
    pub step_size: f64,
    pub agent_size: f64,
    pub goal_size: f64,
    pub base_reward: f64,
    pub horizon: usize,
}

impl Default for FourGoalsConfig {
    fn default() -> Self {
        Self {
            mode: FourGoalsMode::Easy,
            step_size: 0.1,
            agent_size: 0.02,
            goal_size: 0.04,
            base_reward: 1.0,
            horizon: 16,
        }
    }
}

impl FourGoalsConfig {
    pub fn with_mode(mode: FourGoalsMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FourGoals {
    pub cfg: FourGoalsConfig,
    pub agent_pos: [f64; 2],
    pub goal_pos: [[f64; 2]; 4],
    pub goal_size: [f64; 4],
    pub goal_reward: [f64; 4],
    pub t: usize,
    done: bool,
}

impl FourGoals {
    pub fn new(cfg: FourGoalsConfig) -> Self {
        let mut env = Self {
            cfg,
            agent_pos: [0.0; 2],
            goal_pos: EASY_GOALS,
            goal_size: [cfg.goal_size; 4],
            goal_reward: [cfg.base_reward; 4],
            t: 0,
            done: true,
        };
        env.reset_state(0);
        env.done = true;
        env
    }

    fn reset_state(&mut self, seed: u64) {
        let cfg = self.cfg;
        self.agent_pos = [0.0, 0.0];
        self.t = 0;
        self.done = false;
        match cfg.mode {
            FourGoalsMode::Easy => {
                self.goal_pos = EASY_GOALS;
            }
            FourGoalsMode::Medium | FourGoalsMode::Hard => {
                let mut rng = env_rng(seed);
                for g in &mut self.goal_pos {
                    *g = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                }
            }
        }
        if cfg.mode == FourGoalsMode::Hard {
            for i in 0..4 {
                self.goal_size[i] = cfg.goal_size * HARD_SIZE_SCALE[i];
                self.goal_reward[i] = cfg.base_reward * HARD_REWARD_SCALE[i];
            }
        } else {
            self.goal_size = [cfg.goal_size; 4];
            self.goal_reward = [cfg.base_reward; 4];
        }
    }

    pub fn observation(&self) -> Observation {
        let mut obs: Vec<f64> = self
            .goal_pos
            .iter()
            .flat_map(|g| [g[0] - self.agent_pos[0], g[1] - self.agent_pos[1]])
            .collect();
        if self.cfg.mode == FourGoalsMode::Hard {
            obs.extend(self.goal_size);
            obs.extend(self.goal_reward);
        }
        obs
    }

    /// Index of the landmark in contact with the agent, preferring the deepest overlap.
    pub fn contact(&self) -> Option<usize> {
        (0..4)
            .filter_map(|i| {
                let d = ((self.goal_pos[i][0] - self.agent_pos[0]).powi(2) + (self.goal_pos[i][1] - self.agent_pos[1]).powi(2)).sqrt();
                let reach = self.cfg.agent_size + self.goal_size[i];
                (d <= reach + 1e-12).then_some((i, d - reach))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

impl Environment for FourGoals {
    fn n_agents(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        match self.cfg.mode {
            FourGoalsMode::Hard => 16,
            _ => 8,
        }
    }
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.reset_state(seed);
        vec![self.observation()]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called after the 4-Goals episode finished".into()));
        }
        let (dx, dy) = grid::delta(actions[0]);
        self.agent_pos[0] = (self.agent_pos[0] + dx as f64 * self.cfg.step_size).clamp(-1.0, 1.0);
        self.agent_pos[1] = (self.agent_pos[1] + dy as f64 * self.cfg.step_size).clamp(-1.0, 1.0);
        self.t += 1;
        let mut reward = 0.0;
        let mut events = Vec::new();
        if let Some(goal) = self.contact() {
            reward = self.goal_reward[goal];
            events.push(EnvEvent::GoalReached { goal });
            self.done = true;
        }
        if self.t >= self.cfg.horizon {
            self.done = true;
        }
        Ok(StepOutcome {
            observations: vec![self.observation()],
            rewards: vec![reward],
            done: self.done,
            events,
        })
    }
}
