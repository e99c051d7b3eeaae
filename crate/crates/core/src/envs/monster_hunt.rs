//! Monster-Hunt: a two-agent stag-hunt on a 5x5 grid.
//!
//! Two agents, one monster and two apples. After the agents move, the monster
//! steps toward its nearest agent. Meeting the monster alone costs 2; meeting
//! it together pays 5 each; an apple pays `apple_reward` to whoever takes it.
//! Any entity an agent lands on respawns at a free cell.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{self, Cell, N_ACTIONS};
use crate::error::{Error, Result};
use crate::mdp::{env_rng, EnvEvent, Environment, Observation, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonsterHuntConfig {
    pub apple_reward: f64,
    pub catch_reward: f64,
    pub solo_penalty: f64,
    pub horizon: usize,
}

impl Default for MonsterHuntConfig {
    fn default() -> Self {
        Self {
            apple_reward: 1.0,
            catch_reward: 5.0,
            solo_penalty: -2.0,
            horizon: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonsterHunt {
    pub cfg: MonsterHuntConfig,
    pub agent_pos: [Cell; 2],
    pub monster_pos: Cell,
    pub apple_pos: [Cell; 2],
    pub t: usize,
    rng: ChaCha8Rng,
    done: bool,
}

impl MonsterHunt {
    pub fn new(cfg: MonsterHuntConfig) -> Self {
        let mut env = Self {
            cfg,
            agent_pos: [(0, 0); 2],
            monster_pos: (0, 0),
            apple_pos: [(0, 0); 2],
            t: 0,
            rng: env_rng(0),
            done: true,
        };
        env.reset(0);
        env.done = true;
        env
    }

    fn occupied(&self) -> Vec<Cell> {
        let mut v = self.agent_pos.to_vec();
        v.push(self.monster_pos);
        v.extend(self.apple_pos);
        v
    }

    pub fn observation(&self, agent: usize) -> Observation {
        let me = self.agent_pos[agent];
        let other = self.agent_pos[1 - agent];
        let mut obs = vec![me.0 as f64, me.1 as f64];
        obs.extend(grid::rel(me, other));
        obs.extend(grid::rel(me, self.monster_pos));
        for a in self.apple_pos {
            obs.extend(grid::rel(me, a));
        }
        obs
    }

    /// One greedy monster step toward the nearest agent; ties (between agents
    /// and between axes) are broken with the environment RNG.
    fn move_monster(&mut self) {
        let m = self.monster_pos;
        let d = [grid::manhattan(m, self.agent_pos[0]), grid::manhattan(m, self.agent_pos[1])];
        let nearest: Vec<Cell> = if d[0] < d[1] {
            vec![self.agent_pos[0]]
        } else if d[1] < d[0] {
            vec![self.agent_pos[1]]
        } else {
            self.agent_pos.to_vec()
        };
        let target = *nearest.choose(&mut self.rng).expect("two agents");
        if target == m {
            return;
        }
        let mut moves = Vec::with_capacity(2);
        if target.0 != m.0 {
            moves.push((m.0 + (target.0 - m.0).signum(), m.1));
        }
        if target.1 != m.1 {
            moves.push((m.0, m.1 + (target.1 - m.1).signum()));
        }
        self.monster_pos = *moves.choose(&mut self.rng).expect("monster has a move");
    }
}

impl Environment for MonsterHunt {
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        10
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
        let mut taken = Vec::with_capacity(5);
        for _ in 0..5 {
            let c = grid::free_cell(&mut self.rng, &taken);
            taken.push(c);
        }
        self.agent_pos = [taken[0], taken[1]];
        self.monster_pos = taken[2];
        self.apple_pos = [taken[3], taken[4]];
        vec![self.observation(0), self.observation(1)]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called after the Monster-Hunt episode finished".into()));
        }
        for i in 0..2 {
            self.agent_pos[i] = grid::apply_move(self.agent_pos[i], actions[i]);
        }
        self.move_monster();

        let mut rewards = vec![0.0; 2];
        let mut events = Vec::new();
        if self.agent_pos[0] == self.agent_pos[1] {
            events.push(EnvEvent::AgentsMet { cell: self.agent_pos[0] });
        }

        let on_monster: Vec<usize> = (0..2).filter(|&i| self.agent_pos[i] == self.monster_pos).collect();
        let mut respawn_monster = false;
        match on_monster.as_slice() {
            [_, _] => {
                rewards.iter_mut().for_each(|r| *r += self.cfg.catch_reward);
                events.push(EnvEvent::MonsterCaught { cell: self.monster_pos });
                respawn_monster = true;
            }
            [i] => {
                rewards[*i] += self.cfg.solo_penalty;
                events.push(EnvEvent::MonsterPenalty { agent: *i });
                respawn_monster = true;
            }
            _ => {}
        }

        let mut eaten = [false; 2];
        for k in 0..2 {
            let on_apple: Vec<usize> = (0..2).filter(|&i| self.agent_pos[i] == self.apple_pos[k]).collect();
            let winner = match on_apple.as_slice() {
                [i] => Some(*i),
                [_, _] => Some(self.rng.random_range(0..2)),
                _ => None,
            };
            if let Some(agent) = winner {
                rewards[agent] += self.cfg.apple_reward;
                events.push(EnvEvent::AppleEaten { agent });
                eaten[k] = true;
            }
        }

        if respawn_monster {
            let occ = self.occupied();
            self.monster_pos = grid::free_cell(&mut self.rng, &occ);
        }
        for k in 0..2 {
            if eaten[k] {
                let occ = self.occupied();
                self.apple_pos[k] = grid::free_cell(&mut self.rng, &occ);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::grid::{LEFT, RIGHT, STAY, UP};

    fn distinct(cells: &[Cell]) -> bool {
        cells.iter().enumerate().all(|(i, a)| cells[i + 1..].iter().all(|b| a != b))
    }

    fn env_with(agents: [Cell; 2], monster: Cell, apples: [Cell; 2]) -> MonsterHunt {
        let mut env = MonsterHunt::new(MonsterHuntConfig::default());
        env.reset(1);
        env.agent_pos = agents;
        env.monster_pos = monster;
        env.apple_pos = apples;
        env
    }

    #[test]
    fn spawn_is_disjoint() {
        let mut env = MonsterHunt::new(MonsterHuntConfig::default());
        for seed in 0..200 {
            env.reset(seed);
            assert!(distinct(&env.occupied()), "seed {seed}");
        }
    }

    #[test]
    fn joint_catch_pays_both() {
        // Monster between the agents: it stays on a nearest agent's cell or moves to one;
        // placing both agents adjacent to the monster and moving both onto it.
        let mut env = env_with([(1, 2), (3, 2)], (2, 2), [(0, 0), (4, 4)]);
        let out = env.step(&[RIGHT, LEFT]).unwrap();
        assert_eq!(out.rewards, vec![5.0, 5.0]);
        assert!(out.events.iter().any(|e| matches!(e, EnvEvent::MonsterCaught { cell: (2, 2) })));
        assert!(distinct(&env.occupied()) || env.agent_pos[0] == env.agent_pos[1]);
        assert_ne!(env.monster_pos, (2, 2));
    }

    #[test]
    fn solo_meeting_is_penalised() {
        let mut env = env_with([(1, 2), (4, 4)], (2, 2), [(0, 0), (0, 4)]);
        let out = env.step(&[RIGHT, STAY]).unwrap();
        assert_eq!(out.rewards, vec![-2.0, 0.0]);
    }

    #[test]
    fn apple_pays_and_respawns() {
        let mut env = env_with([(0, 0), (4, 4)], (2, 4), [(0, 1), (3, 0)]);
        let out = env.step(&[UP, STAY]).unwrap();
        assert_eq!(out.rewards[0], 1.0);
        assert_ne!(env.apple_pos[0], (0, 1));
    }

    #[test]
    fn apple_tie_goes_to_exactly_one_agent() {
        for seed in 0..20 {
            let mut env = env_with([(0, 1), (2, 1)], (4, 4), [(1, 1), (3, 3)]);
            env.rng = env_rng(seed);
            let out = env.step(&[RIGHT, LEFT]).unwrap();
            let apples: Vec<_> = out.events.iter().filter(|e| matches!(e, EnvEvent::AppleEaten { .. })).collect();
            assert_eq!(apples.len(), 1);
            assert_eq!(out.rewards.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn monster_never_moves_away() {
        let mut env = MonsterHunt::new(MonsterHuntConfig::default());
        let mut rng = env_rng(42);
        for seed in 0..50 {
            env.reset(seed);
            for _ in 0..50 {
                let actions = [rng.random_range(0..5), rng.random_range(0..5)];
                for i in 0..2 {
                    env.agent_pos[i] = grid::apply_move(env.agent_pos[i], actions[i]);
                }
                let before = env.agent_pos.iter().map(|a| grid::manhattan(env.monster_pos, *a)).min().unwrap();
                env.move_monster();
                let after = env.agent_pos.iter().map(|a| grid::manhattan(env.monster_pos, *a)).min().unwrap();
                assert!(after <= before);
                assert!(after == 0 || after < before);
            }
        }
    }

    #[test]
    fn horizon_and_step_after_done() {
        let mut env = MonsterHunt::new(MonsterHuntConfig::default());
        env.reset(3);
        for t in 0..50 {
            let out = env.step(&[STAY, STAY]).unwrap();
            assert_eq!(out.done, t == 49);
        }
        assert!(matches!(env.step(&[STAY, STAY]), Err(Error::Usage(_))));
    }

    #[test]
    fn observation_layout() {
        let env = env_with([(1, 2), (3, 0)], (4, 4), [(0, 0), (2, 3)]);
        assert_eq!(env.observation(0), vec![1.0, 2.0, 2.0, -2.0, 3.0, 2.0, -1.0, -2.0, 1.0, 1.0]);
    }
}
