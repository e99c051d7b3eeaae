//! Diverse policy discovery by reward-switching policy optimization.
//!
//! Policies are trained one after another. Each new policy maximises the task
//! reward on trajectories that are sufficiently unlikely (by negative
//! log-likelihood) under every previously archived policy, and is pushed away
//! from the archive by intrinsic rewards on the trajectories that are not.
//!
//! Module map:
//!
//! - [`mdp`]: environments, policies, trajectories and seeded rollouts
//! - [`envs`]: 4-Goals, Monster-Hunt, Escalation and a bandit
//! - [`neural`]: MLP with analytic gradients and Adam
//! - [`ppo`]: the PPO learner every iteration is built on
//! - [`diversity`]: trajectory NLL, cross-entropy, KL, JSD and population diversity
//! - [`rspo`]: reference archive, filtering, reward switching and the discovery loop
//! - [`analysis`]: strategy classifiers and distinct-mode counting
//! - [`oracle`]: exhaustive checks on tiny tabular MDPs
//! - [`runner`]: run configs, checkpoints and the command implementations

pub mod analysis;
pub mod diversity;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod neural;
pub mod oracle;
pub mod ppo;
pub mod rspo;
pub mod runner;

pub use error::{Error, Result};
