//! Escalation: two agents must keep stepping on a moving light together.
//!
//! The first time both agents and the light share a cell, cooperation starts.
//! Every cooperation step pays both agents 1, extends the cooperation length
//! `L` and moves the light to a random neighbouring cell. If only one agent
//! follows the light it pays `0.9 * L` and the game ends; if neither does the
//! game simply ends.

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{self, Cell, N_ACTIONS};
use crate::error::{Error, Result};
use crate::mdp::{env_rng, EnvEvent, Environment, Observation, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscalationConfig {
    pub cooperation_reward: f64,
    pub defection_penalty_rate: f64,
    pub horizon: usize,
}

impl Default for EscalationConfig {
    fn default() -> Self {
        Self {
            cooperation_reward: 1.0,
            defection_penalty_rate: 0.9,
            horizon: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Escalation {
    pub cfg: EscalationConfig,
    pub agent_pos: [Cell; 2],
    pub light_pos: Cell,
    pub coop_len: u32,
    pub in_coop: bool,
    pub t: usize,
    rng: ChaCha8Rng,
    done: bool,
}

impl Escalation {
    pub fn new(cfg: EscalationConfig) -> Self {
        let mut env = Self {
            cfg,
            agent_pos: [(0, 0); 2],
            light_pos: (0, 0),
            coop_len: 0,
            in_coop: false,
            t: 0,
            rng: env_rng(0),
            done: true,
        };
        env.reset(0);
        env.done = true;
        env
    }

    pub fn observation(&self, agent: usize) -> Observation {
        let me = self.agent_pos[agent];
        let mut obs = vec![self.coop_len as f64, me.0 as f64, me.1 as f64];
        obs.extend(grid::rel(me, self.agent_pos[1 - agent]));
        obs.extend(grid::rel(me, self.light_pos));
        obs
    }

    fn cooperate(&mut self, rewards: &mut [f64], events: &mut Vec<EnvEvent>) {
        rewards.iter_mut().for_each(|r| *r += self.cfg.cooperation_reward);
        self.coop_len += 1;
        events.push(EnvEvent::CooperationStep { length: self.coop_len });
        let options = grid::neighbours(self.light_pos);
        self.light_pos = *options.choose(&mut self.rng).expect("every cell has a neighbour");
    }
}

impl Environment for Escalation {
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        7
    }
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = env_rng(seed);
        self.t = 0;
        self.done = false;
        self.coop_len = 0;
        self.in_coop = false;
        let a = grid::free_cell(&mut self.rng, &[]);
        let b = grid::free_cell(&mut self.rng, &[a]);
        let l = grid::free_cell(&mut self.rng, &[a, b]);
        self.agent_pos = [a, b];
        self.light_pos = l;
        vec![self.observation(0), self.observation(1)]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called after the Escalation episode finished".into()));
        }
        for i in 0..2 {
            self.agent_pos[i] = grid::apply_move(self.agent_pos[i], actions[i]);
        }
        let on_light: Vec<usize> = (0..2).filter(|&i| self.agent_pos[i] == self.light_pos).collect();
        let mut rewards = vec![0.0; 2];
        let mut events = Vec::new();
        if self.agent_pos[0] == self.agent_pos[1] {
            events.push(EnvEvent::AgentsMet { cell: self.agent_pos[0] });
        }

        if !self.in_coop {
            if on_light.len() == 2 {
                self.in_coop = true;
                self.coop_len = 0;
                self.cooperate(&mut rewards, &mut events);
            }
        } else {
            match on_light.as_slice() {
                [_, _] => self.cooperate(&mut rewards, &mut events),
                [i] => {
                    rewards[*i] -= self.cfg.defection_penalty_rate * self.coop_len as f64;
                    events.push(EnvEvent::Defection {
                        agent: *i,
                        length: self.coop_len,
                    });
                    self.done = true;
                }
                _ => {
                    events.push(EnvEvent::CooperationEnded { length: self.coop_len });
                    self.done = true;
                }
            }
        }

        self.t += 1;
        if self.t >= self.cfg.horizon {
            self.done = true;
        }
        Ok(StepOutcome {
            observations: vec![self.observation(0), self.observation(1)],
            rewards,
            done: self.done,
            events,
        })
    }
}

/// Scripted pair member: follow the light for `target` cooperation steps, then step off it.
pub fn cooperate_for(target: u32) -> impl Fn(&[f64]) -> usize + Sync {
    move |obs: &[f64]| {
        let coop_len = obs[0] as u32;
        let me = (obs[1] as i32, obs[2] as i32);
        let light = (me.0 + obs[5] as i32, me.1 + obs[6] as i32);
        if coop_len >= target && target > 0 {
            // Leave the light: any move that does not land on it.
            return [grid::UP, grid::DOWN, grid::LEFT, grid::RIGHT]
                .into_iter()
                .find(|a| grid::apply_move(me, *a) != light)
                .unwrap_or(grid::STAY);
        }
        if target == 0 {
            return grid::STAY;
        }
        grid::step_toward(me, light)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout_episode, ScriptedPolicy};

    fn play(target: u32, seed: u64) -> (Vec<f64>, Vec<EnvEvent>) {
        let policy = ScriptedPolicy::new(7, 5, cooperate_for(target));
        let mut env = Escalation::new(EscalationConfig::default());
        let ep = rollout_episode(&policy, &mut env, 50, seed).unwrap();
        let totals = ep.trajectories.iter().map(|t| t.total_reward()).collect();
        (totals, ep.events.into_iter().map(|(_, e)| e).collect())
    }

    #[test]
    fn cooperating_l_steps_returns_l() {
        for target in 1..=6 {
            for seed in 0..20 {
                let (totals, events) = play(target, seed);
                assert_eq!(totals, vec![target as f64; 2], "L={target} seed={seed}");
                assert!(events.contains(&EnvEvent::CooperationEnded { length: target }));
            }
        }
    }

    #[test]
    fn single_defection_penalty() {
        let mut env = Escalation::new(EscalationConfig::default());
        env.reset(0);
        env.in_coop = true;
        env.coop_len = 4;
        env.agent_pos = [(2, 1), (0, 0)];
        env.light_pos = (2, 2);
        let out = env.step(&[grid::UP, grid::STAY]).unwrap();
        assert!((out.rewards[0] + 3.6).abs() < 1e-12);
        assert_eq!(out.rewards[1], 0.0);
        assert!(out.done);
    }

    #[test]
    fn cooperation_length_is_observed() {
        let mut env = Escalation::new(EscalationConfig::default());
        env.reset(0);
        env.agent_pos = [(1, 2), (3, 2)];
        env.light_pos = (2, 2);
        let out = env.step(&[grid::RIGHT, grid::LEFT]).unwrap();
        assert_eq!(out.rewards, vec![1.0, 1.0]);
        assert_eq!(env.coop_len, 1);
        assert_eq!(out.observations[0][0], 1.0);
        assert_eq!(out.observations[1][0], 1.0);
        assert_eq!(grid::manhattan(env.light_pos, (2, 2)), 1);
    }

    #[test]
    fn never_cooperating_pair_earns_nothing() {
        let (totals, events) = play(0, 4);
        assert_eq!(totals, vec![0.0, 0.0]);
        assert!(!events.iter().any(|e| matches!(e, EnvEvent::CooperationStep { .. })));
    }

    #[test]
    fn lone_agent_on_light_before_cooperation_is_harmless() {
        let mut env = Escalation::new(EscalationConfig::default());
        env.reset(0);
        env.agent_pos = [(1, 2), (4, 4)];
        env.light_pos = (2, 2);
        let out = env.step(&[grid::RIGHT, grid::STAY]).unwrap();
        assert_eq!(out.rewards, vec![0.0, 0.0]);
        assert!(!out.done);
    }
}
