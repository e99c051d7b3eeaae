//! Strategy classification and distinct-mode counting.
//!
//! The thresholds here are an operational definition of the visual strategy
//! categories; every label is reported together with the thresholds used.

use serde::{Deserialize, Serialize};

use crate::envs::grid::{self, GRID};
use crate::envs::four_goals::HARD_SIZE_SCALE;
use crate::envs::{EscalationConfig, FourGoals, FourGoalsConfig, FourGoalsMode, MonsterHunt, MonsterHuntConfig};
use crate::envs::Escalation;
use crate::error::{Error, Result};
use crate::mdp::{collect_episodes, EnvEvent, Environment, Episode, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MonsterHuntMode {
    Apple,
    Corner,
    Edge,
    Chase,
    None,
}

/// Strategy label; the variant is fixed by the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLabel {
    /// Landmark that at least half the episodes end on (touched, or nearest when
    /// time runs out), otherwise `None`.
    Goal(Option<usize>),
    MonsterHunt(MonsterHuntMode),
    /// Cooperation length class; the horizon denotes full-length cooperation.
    Cooperation(u32),
    /// Most probable bandit arm.
    Arm(usize),
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModeLabel::Goal(Some(g)) => write!(f, "goal_{g}"),
            ModeLabel::Goal(None) => write!(f, "none"),
            ModeLabel::MonsterHunt(m) => write!(f, "{}", format!("{m:?}").to_lowercase()),
            ModeLabel::Cooperation(l) => write!(f, "L={l}"),
            ModeLabel::Arm(a) => write!(f, "arm_{a}"),
        }
    }
}

/// Return statistics of an evaluation, per agent-trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
}

pub fn return_stats(episodes: &[Episode]) -> ReturnStats {
    let totals: Vec<f64> = episodes.iter().flat_map(|e| e.trajectories.iter().map(|t| t.total_reward())).collect();
    let n = totals.len().max(1) as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let std = (totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    ReturnStats { mean, std }
}

fn check_n_eval(n_eval: usize, min: usize) -> Result<()> {
    if n_eval < min {
        return Err(Error::Config(format!("n_eval must be at least {min}, got {n_eval}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourGoalsEval {
    pub label: ModeLabel,
    /// Episodes that touched each landmark.
    pub goal_counts: [usize; 4],
    /// Episodes whose outcome is each landmark: the one touched, otherwise the
    /// one nearest (edge to edge) when time ran out.
    pub endpoint_counts: [usize; 4],
    pub returns: ReturnStats,
}

/// Landmark whose edge is closest to the agent, from a 4-Goals observation.
fn nearest_landmark(obs: &[f64], cfg: &FourGoalsConfig) -> usize {
    let size = |i: usize| match cfg.mode {
        FourGoalsMode::Hard => cfg.goal_size * HARD_SIZE_SCALE[i],
        _ => cfg.goal_size,
    };
    let gap = |i: usize| obs[2 * i].hypot(obs[2 * i + 1]) - size(i);
    (0..4).min_by(|a, b| gap(*a).total_cmp(&gap(*b))).expect("four goals")
}

pub fn classify_four_goals(policy: &dyn Policy, cfg: &FourGoalsConfig, n_eval: usize, seed: u64) -> Result<FourGoalsEval> {
    check_n_eval(n_eval, 16)?;
    let cfg = *cfg;
    let factory = move || Box::new(FourGoals::new(cfg)) as Box<dyn Environment>;
    let episodes = collect_episodes(policy, &factory, n_eval, cfg.horizon, seed)?;
    let mut goal_counts = [0usize; 4];
    let mut endpoint_counts = [0usize; 4];
    for ep in &episodes {
        let reached = ep.events.iter().find_map(|(_, e)| match e {
            EnvEvent::GoalReached { goal } => Some(*goal),
            _ => None,
        });
        if let Some(g) = reached {
            goal_counts[g] += 1;
        }
        let end = reached.unwrap_or_else(|| nearest_landmark(&ep.trajectories[0].final_observation, &cfg));
        endpoint_counts[end] += 1;
    }
    let (best, count) = endpoint_counts.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i))).expect("four goals");
    let label = (2 * count >= n_eval).then_some(best);
    Ok(FourGoalsEval {
        label: ModeLabel::Goal(label),
        goal_counts,
        endpoint_counts,
        returns: return_stats(&episodes),
    })
}

/// Counts of agent-meeting events per grid cell, indexed `[x][y]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub counts: [[u64; GRID as usize]; GRID as usize],
}

impl Heatmap {
    pub fn add(&mut self, cell: grid::Cell) {
        self.counts[cell.0 as usize][cell.1 as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn mass_where(&self, pred: impl Fn(grid::Cell) -> bool) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let mut m = 0;
        for x in 0..GRID {
            for y in 0..GRID {
                if pred((x, y)) {
                    m += self.counts[x as usize][y as usize];
                }
            }
        }
        m as f64 / total as f64
    }

    pub fn corner_mass(&self) -> f64 {
        self.mass_where(grid::is_corner)
    }

    pub fn edge_mass(&self) -> f64 {
        self.mass_where(grid::is_edge)
    }

    /// One `x,y,count` row per cell.
    pub fn csv(&self) -> String {
        let mut s = String::from("x,y,count\n");
        for x in 0..GRID as usize {
            for y in 0..GRID as usize {
                s.push_str(&format!("{x},{y},{}\n", self.counts[x][y]));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonsterHuntThresholds {
    /// Apple share of positive reward at or above which the policy is Apple.
    pub apple_share: f64,
    /// Meeting mass on corner (resp. non-corner boundary) cells for Corner (resp. Edge).
    pub boundary_mass: f64,
    /// Joint catches per episode needed for Chase.
    pub catch_rate: f64,
}

impl Default for MonsterHuntThresholds {
    fn default() -> Self {
        Self {
            apple_share: 0.8,
            boundary_mass: 0.6,
            catch_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonsterHuntEval {
    pub label: ModeLabel,
    pub heatmap: Heatmap,
    pub apple_share: f64,
    pub catches_per_episode: f64,
    pub apples_per_episode: f64,
    pub penalties_per_episode: f64,
    pub corner_mass: f64,
    pub edge_mass: f64,
    pub thresholds: MonsterHuntThresholds,
    pub returns: ReturnStats,
}

/// Rules, in order: Apple, Corner, Edge, Chase, otherwise None.
pub fn classify_monster_hunt(policy: &dyn Policy, cfg: &MonsterHuntConfig, thresholds: &MonsterHuntThresholds, n_eval: usize, seed: u64) -> Result<MonsterHuntEval> {
    check_n_eval(n_eval, 32)?;
    let cfg = *cfg;
    let factory = move || Box::new(MonsterHunt::new(cfg)) as Box<dyn Environment>;
    let episodes = collect_episodes(policy, &factory, n_eval, cfg.horizon, seed)?;
    let mut heatmap = Heatmap::default();
    let (mut catches, mut apples, mut penalties) = (0usize, 0usize, 0usize);
    for ep in &episodes {
        for (_, e) in &ep.events {
            match e {
                EnvEvent::AgentsMet { cell } => heatmap.add(*cell),
                EnvEvent::MonsterCaught { .. } => catches += 1,
                EnvEvent::AppleEaten { .. } => apples += 1,
                EnvEvent::MonsterPenalty { .. } => penalties += 1,
                _ => {}
            }
        }
    }
    let apple_reward = apples as f64 * cfg.apple_reward.max(0.0);
    let catch_reward = catches as f64 * 2.0 * cfg.catch_reward.max(0.0);
    let positive = apple_reward + catch_reward;
    let apple_share = if positive > 0.0 { apple_reward / positive } else { 0.0 };
    let n = n_eval as f64;
    let catches_per_episode = catches as f64 / n;
    let (corner_mass, edge_mass) = (heatmap.corner_mass(), heatmap.edge_mass());
    let mode = if positive > 0.0 && apple_share >= thresholds.apple_share {
        MonsterHuntMode::Apple
    } else if corner_mass >= thresholds.boundary_mass {
        MonsterHuntMode::Corner
    } else if edge_mass >= thresholds.boundary_mass {
        MonsterHuntMode::Edge
    } else if catches_per_episode >= thresholds.catch_rate {
        MonsterHuntMode::Chase
    } else {
        MonsterHuntMode::None
    };
    Ok(MonsterHuntEval {
        label: ModeLabel::MonsterHunt(mode),
        heatmap,
        apple_share,
        catches_per_episode,
        apples_per_episode: apples as f64 / n,
        penalties_per_episode: penalties as f64 / n,
        corner_mass,
        edge_mass,
        thresholds: *thresholds,
        returns: return_stats(&episodes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationEval {
    pub label: ModeLabel,
    pub mean_length: f64,
    pub returns: ReturnStats,
}

/// Cooperation length of one episode; an episode cut off by the horizon while
/// still cooperating counts as full-length cooperation.
pub fn cooperation_length(ep: &Episode, horizon: usize) -> u32 {
    let mut len = 0;
    let mut last_coop_t = None;
    let mut ended = false;
    for (t, e) in &ep.events {
        match e {
            EnvEvent::CooperationStep { length } => {
                len = len.max(*length);
                last_coop_t = Some(*t);
            }
            EnvEvent::CooperationEnded { .. } | EnvEvent::Defection { .. } => ended = true,
            _ => {}
        }
    }
    if !ended && last_coop_t == Some(horizon - 1) {
        return horizon as u32;
    }
    len
}

pub fn classify_escalation(policy: &dyn Policy, cfg: &EscalationConfig, n_eval: usize, seed: u64) -> Result<EscalationEval> {
    check_n_eval(n_eval, 32)?;
    let cfg = *cfg;
    let factory = move || Box::new(Escalation::new(cfg)) as Box<dyn Environment>;
    let episodes = collect_episodes(policy, &factory, n_eval, cfg.horizon, seed)?;
    let total: u32 = episodes.iter().map(|e| cooperation_length(e, cfg.horizon)).sum();
    let mean_length = total as f64 / n_eval as f64;
    Ok(EscalationEval {
        label: ModeLabel::Cooperation(mean_length.round() as u32),
        mean_length,
        returns: return_stats(&episodes),
    })
}

/// Labels a bandit policy by its most likely arm.
pub fn classify_bandit(policy: &dyn Policy) -> Result<ModeLabel> {
    let lp = policy.log_probs(&[1.0])?;
    let best = (0..lp.len()).max_by(|a, b| lp[*a].total_cmp(&lp[*b]).then(b.cmp(a))).unwrap_or(0);
    Ok(ModeLabel::Arm(best))
}

/// Number of distinct strategies among `labels`. "No strategy" labels are not
/// counted; cooperation lengths within 1 of each other (transitively) merge.
pub fn distinct_mode_count(labels: &[ModeLabel]) -> usize {
    let mut lengths: Vec<u32> = labels
        .iter()
        .filter_map(|l| match l {
            ModeLabel::Cooperation(x) => Some(*x),
            _ => None,
        })
        .collect();
    lengths.sort_unstable();
    let cooperation_groups = lengths.windows(2).filter(|w| w[1] - w[0] > 1).count() + usize::from(!lengths.is_empty());
    let mut others: Vec<ModeLabel> = labels
        .iter()
        .copied()
        .filter(|l| !matches!(l, ModeLabel::Cooperation(_) | ModeLabel::Goal(None) | ModeLabel::MonsterHunt(MonsterHuntMode::None)))
        .collect();
    others.sort_by_key(|l| format!("{l}"));
    others.dedup();
    others.len() + cooperation_groups
}
