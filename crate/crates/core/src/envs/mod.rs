//! The toy environments: 4-Goals, Monster-Hunt, Escalation, and a bandit.

pub mod bandit;
pub mod escalation;
pub mod four_goals;
pub mod grid;
pub mod monster_hunt;

use serde::{Deserialize, Serialize};

pub use bandit::Bandit;
pub use escalation::{Escalation, EscalationConfig};
pub use four_goals::{FourGoals, FourGoalsConfig, FourGoalsMode};
pub use monster_hunt::{MonsterHunt, MonsterHuntConfig};

use crate::error::{Error, Result};
use crate::mdp::{EnvFactory, Environment};

/// Environment selection as it appears in run configs (`"name": "four_goals"` etc.).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    FourGoals(FourGoalsConfig),
    MonsterHunt(MonsterHuntConfig),
    Escalation(EscalationConfig),
    Bandit { arm_rewards: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    FourGoals,
    MonsterHunt,
    Escalation,
    Bandit,
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::FourGoals(_) => EnvKind::FourGoals,
            EnvConfig::MonsterHunt(_) => EnvKind::MonsterHunt,
            EnvConfig::Escalation(_) => EnvKind::Escalation,
            EnvConfig::Bandit { .. } => EnvKind::Bandit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = match self {
            EnvConfig::FourGoals(c) => {
                if !(c.step_size > 0.0 && c.agent_size >= 0.0 && c.goal_size > 0.0) {
                    return Err(Error::Config("four_goals sizes must be positive".into()));
                }
                c.horizon
            }
            EnvConfig::MonsterHunt(c) => c.horizon,
            EnvConfig::Escalation(c) => c.horizon,
            EnvConfig::Bandit { arm_rewards } => {
                if arm_rewards.len() < 2 || arm_rewards.iter().any(|r| !r.is_finite()) {
                    return Err(Error::Config("bandit needs at least two finite arm rewards".into()));
                }
                1
            }
        };
        if horizon == 0 {
            return Err(Error::Config("env horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Box<dyn Environment> {
        match self {
            EnvConfig::FourGoals(c) => Box::new(FourGoals::new(*c)),
            EnvConfig::MonsterHunt(c) => Box::new(MonsterHunt::new(*c)),
            EnvConfig::Escalation(c) => Box::new(Escalation::new(*c)),
            EnvConfig::Bandit { arm_rewards } => Box::new(Bandit::new(arm_rewards.clone())),
        }
    }
}

impl EnvFactory for EnvConfig {
    fn make(&self) -> Box<dyn Environment> {
        self.build()
    }
}
