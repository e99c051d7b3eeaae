//! Environment/policy abstractions, the trajectory data model, and seeded rollouts.
//!
//! Every episode is driven by a single `u64` seed. The environment draws from
//! one ChaCha stream of that seed and action sampling from another, so a
//! `(policy parameters, environment, seed)` triple fixes the trajectory
//! exactly, and batches can be collected in parallel without changing results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Observation = Vec<f64>;

/// Lower bound applied to every per-step log-probability when scoring a
/// trajectory against a reference, so NLL stays finite for deterministic refs.
pub const LOG_PROB_FLOOR: f64 = -50.0;

/// A policy over a discrete action set.
pub trait Policy: Sync {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;

    /// Natural-log probabilities of every action. Entries may be `-inf` for
    /// actions the policy never takes.
    fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>>;

    fn log_prob(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(self.log_probs(obs)?[action])
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        (**self).log_probs(obs)
    }
}

impl<P: Policy + ?Sized + Send> Policy for Box<P> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        (**self).log_probs(obs)
    }
}

/// Uniform distribution over `n_actions`.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub obs_dim: usize,
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn log_probs(&self, _obs: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-(self.n_actions as f64).ln(); self.n_actions])
    }
}

/// Deterministic policy given by a function of the observation.
pub struct ScriptedPolicy<F> {
    obs_dim: usize,
    n_actions: usize,
    choose: F,
}

impl<F: Fn(&[f64]) -> usize + Sync> ScriptedPolicy<F> {
    pub fn new(obs_dim: usize, n_actions: usize, choose: F) -> Self {
        Self {
            obs_dim,
            n_actions,
            choose,
        }
    }
}

impl<F: Fn(&[f64]) -> usize + Sync> Policy for ScriptedPolicy<F> {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let a = (self.choose)(obs);
        let mut lp = vec![f64::NEG_INFINITY; self.n_actions];
        lp[a] = 0.0;
        Ok(lp)
    }
}

/// Noteworthy things an environment reports alongside rewards; consumed by
/// the strategy classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvEvent {
    GoalReached { goal: usize },
    /// Both agents and the monster share `cell`.
    MonsterCaught { cell: (i32, i32) },
    MonsterPenalty { agent: usize },
    AppleEaten { agent: usize },
    /// The two agents occupy the same cell after moving.
    AgentsMet { cell: (i32, i32) },
    /// A cooperation step was completed; `length` is the new cooperation length.
    CooperationStep { length: u32 },
    /// Exactly one agent stayed on the light and was penalised.
    Defection { agent: usize, length: u32 },
    /// Both agents left the light together.
    CooperationEnded { length: u32 },
}

pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub events: Vec<EnvEvent>,
}

/// A (possibly multi-agent) episodic environment with a discrete action set
/// shared by all agents.
pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Episode time limit imposed by the environment itself.
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Observation>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;
}

/// Something that can build fresh environment instances from any thread.
pub trait EnvFactory: Sync {
    fn make(&self) -> Box<dyn Environment>;
}

impl<F: Fn() -> Box<dyn Environment> + Sync> EnvFactory for F {
    fn make(&self) -> Box<dyn Environment> {
        self()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// The environment terminated the episode (as opposed to the rollout
    /// horizon cutting it short).
    pub done: bool,
    pub agent_id: usize,
    /// Observation after the last step; used to bootstrap truncated episodes.
    pub final_observation: Observation,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards().sum()
    }
}

/// All agents' trajectories from one episode plus the time-stamped event log.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectories: Vec<Trajectory>,
    pub events: Vec<(usize, EnvEvent)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub env_seed_base: u64,
}

impl RolloutBatch {
    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// SplitMix64 finaliser; used to derive independent seeds from structured ids.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5253_504F_u64, |acc, p| mix_seed(acc ^ mix_seed(*p)))
}

/// RNG for environment-internal randomness of the episode with this seed.
pub fn env_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn action_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Draws an action index from log-probabilities with one uniform variate.
pub fn sample_action<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = a;
        }
        acc += p;
        if u < acc {
            return a;
        }
    }
    last
}

fn check_dims(policy: &dyn Policy, env: &dyn Environment) -> Result<()> {
    if policy.obs_dim() != env.obs_dim() {
        return Err(Error::Config(format!(
            "policy expects observations of length {}, environment produces {}",
            policy.obs_dim(),
            env.obs_dim()
        )));
    }
    if policy.n_actions() != env.n_actions() {
        return Err(Error::Config(format!(
            "policy has {} actions, environment has {}",
            policy.n_actions(),
            env.n_actions()
        )));
    }
    Ok(())
}

/// Runs one episode with every agent acting from the shared `policy`.
///
/// The episode stops when the environment reports `done` or after `horizon`
/// steps, whichever comes first.
pub fn rollout_episode(policy: &dyn Policy, env: &mut dyn Environment, horizon: usize, seed: u64) -> Result<Episode> {
    check_dims(policy, env)?;
    let n_agents = env.n_agents();
    let mut obs = env.reset(seed);
    let mut rng = action_rng(seed);
    let mut trajectories: Vec<Trajectory> = (0..n_agents)
        .map(|agent_id| Trajectory {
            steps: Vec::with_capacity(horizon),
            done: false,
            agent_id,
            final_observation: Vec::new(),
        })
        .collect();
    let mut events = Vec::new();
    let mut done = false;
    for t in 0..horizon {
        let mut actions = Vec::with_capacity(n_agents);
        let mut log_probs = Vec::with_capacity(n_agents);
        for o in &obs {
            let lp = policy.log_probs(o)?;
            if lp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Numeric {
                    step: t,
                    what: "policy log-probabilities".into(),
                });
            }
            let a = sample_action(&lp, &mut rng);
            log_probs.push(lp[a]);
            actions.push(a);
        }
        let outcome = env.step(&actions)?;
        for (i, traj) in trajectories.iter_mut().enumerate() {
            traj.steps.push(Step {
                observation: std::mem::take(&mut obs[i]),
                action: actions[i],
                reward: outcome.rewards[i],
                log_prob: log_probs[i],
            });
        }
        events.extend(outcome.events.into_iter().map(|e| (t, e)));
        obs = outcome.observations;
        if outcome.done {
            done = true;
            break;
        }
    }
    for (traj, o) in trajectories.iter_mut().zip(obs) {
        traj.done = done;
        traj.final_observation = o;
    }
    Ok(Episode { trajectories, events })
}

/// Single-agent rollout: the trajectory of agent 0.
pub fn rollout(policy: &dyn Policy, env: &mut dyn Environment, horizon: usize, seed: u64) -> Result<Trajectory> {
    let mut ep = rollout_episode(policy, env, horizon, seed)?;
    Ok(ep.trajectories.swap_remove(0))
}

/// `sum_t gamma^t r_t` over the trajectory's actual length.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut w = 1.0;
    for r in traj.rewards() {
        g += w * r;
        w *= gamma;
    }
    g
}

/// Runs `episodes` independent episodes in parallel; episode `i` uses seed
/// `seed_base + i`. All agents' trajectories are stored, episode-major.
pub fn collect_episodes(policy: &dyn Policy, factory: &dyn EnvFactory, episodes: usize, horizon: usize, seed_base: u64) -> Result<Vec<Episode>> {
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = factory.make();
            rollout_episode(policy, env.as_mut(), horizon, seed_base.wrapping_add(i as u64)).map_err(|e| Error::Rollout {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn collect_batch(policy: &dyn Policy, factory: &dyn EnvFactory, episodes: usize, horizon: usize, seed_base: u64) -> Result<RolloutBatch> {
    if episodes == 0 {
        return Err(Error::Config("batch must contain at least one episode".into()));
    }
    let trajectories = collect_episodes(policy, factory, episodes, horizon, seed_base)?
        .into_iter()
        .flat_map(|ep| ep.trajectories)
        .collect();
    Ok(RolloutBatch {
        trajectories,
        env_seed_base: seed_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::bandit::Bandit;

    #[test]
    fn discounted_return_cases() {
        let t = |rs: &[f64]| Trajectory {
            steps: rs
                .iter()
                .map(|r| Step {
                    observation: vec![],
                    action: 0,
                    reward: *r,
                    log_prob: 0.0,
                })
                .collect(),
            done: true,
            agent_id: 0,
            final_observation: vec![],
        };
        assert_eq!(discounted_return(&t(&[1.0, 1.0, 1.0]), 1.0), 3.0);
        assert_eq!(discounted_return(&t(&[0.0, 0.0, 2.0]), 0.5), 0.5);
        assert!((discounted_return(&t(&[2.0, -0.9]), 0.99) - 1.109).abs() < 1e-12);
    }

    #[test]
    fn sample_action_respects_support() {
        let mut rng = action_rng(3);
        let lp = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        for _ in 0..100 {
            assert_eq!(sample_action(&lp, &mut rng), 1);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut env = Bandit::two_armed();
        let p = UniformPolicy { obs_dim: 3, n_actions: 2 };
        assert!(matches!(rollout(&p, &mut env, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[7, 9]), derive_seed(&[7, 9]));
    }
}
