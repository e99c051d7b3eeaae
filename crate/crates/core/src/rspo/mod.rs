//! Reward-switching policy optimization.
//!
//! Each archived reference `pi_j` carries a novelty threshold `delta_j`. A
//! sampled trajectory satisfies reference `j` when its NLL under `pi_j` is at
//! least `delta_j`; it is accepted when it satisfies every reference. Accepted
//! trajectories train on the task reward, rejected ones on intrinsic rewards
//! that push the learner away from the references it is too close to.

mod driver;
mod predictor;

pub use driver::{auto_threshold, rspo_iteration, rspo_run, IterationDiagnostics, IterationOutcome, RunOutcome};
pub use predictor::{predictor_mse_on, reward_intrinsic, train_reward_predictor, PredictorConfig, RewardPredictor};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::mdp::{Policy, RolloutBatch, Trajectory, LOG_PROB_FLOOR};
use crate::neural::CategoricalPolicy;

/// Which intrinsic rewards apply to rejected trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicMode {
    Behavior,
    Reward,
    Both,
    /// Rejected trajectories are discarded.
    None,
}

/// How the diversity constraints enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Reward switching between extrinsic and intrinsic signals.
    Switch,
    /// Soft penalty: `beta`-weighted behavior intrinsic added to every trajectory.
    NoSwitch,
    /// Independent PPO restarts; constraints are ignored.
    PgRestarts,
}

/// How trajectory NLL is compared with a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllNormalization {
    Sum,
    /// Divide by trajectory length, for environments with variable episode length.
    PerStep,
}

impl NllNormalization {
    pub fn apply(self, nll: f64, len: usize) -> f64 {
        match self {
            NllNormalization::Sum => nll,
            NllNormalization::PerStep => nll / len.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RspoConfig {
    pub iterations: usize,
    pub alpha: f64,
    pub lambda_b: f64,
    pub lambda_r: f64,
    pub intrinsic: IntrinsicMode,
    pub smoothed: bool,
    pub momentum: f64,
    pub objective: Objective,
    pub beta: f64,
    pub nll_normalization: NllNormalization,
    /// Random-policy episodes used to estimate each automatic threshold.
    pub threshold_episodes: usize,
    pub predictor: PredictorConfig,
}

impl Default for RspoConfig {
    fn default() -> Self {
        Self::four_goals()
    }
}

impl RspoConfig {
    pub fn four_goals() -> Self {
        Self {
            iterations: 7,
            alpha: 0.5,
            lambda_b: 0.0,
            lambda_r: 0.0,
            intrinsic: IntrinsicMode::None,
            smoothed: false,
            momentum: 0.0,
            objective: Objective::Switch,
            beta: 1e-3,
            nll_normalization: NllNormalization::Sum,
            threshold_episodes: 256,
            predictor: PredictorConfig::default(),
        }
    }

    pub fn stag_hunt(iterations: usize) -> Self {
        Self {
            iterations,
            alpha: 0.6,
            lambda_b: 0.2,
            lambda_r: 1.0,
            intrinsic: IntrinsicMode::Both,
            smoothed: iterations >= 10,
            ..Self::four_goals()
        }
    }

    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::FourGoals | EnvKind::Bandit => Self::four_goals(),
            EnvKind::MonsterHunt => Self::stag_hunt(10),
            EnvKind::Escalation => Self::stag_hunt(3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("rspo: {m}")));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.alpha == 0.0 {
            log::warn!("alpha = 0 makes every threshold 0, so every trajectory is accepted");
        }
        if self.lambda_b < 0.0 || self.lambda_r < 0.0 || self.beta < 0.0 {
            return bad("lambda_b, lambda_r and beta must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.threshold_episodes == 0 {
            return bad("threshold_episodes must be positive");
        }
        Ok(())
    }

    /// Weight of the behavior intrinsic reward after applying the mode.
    pub fn effective_lambda_b(&self) -> f64 {
        match self.intrinsic {
            IntrinsicMode::Behavior | IntrinsicMode::Both => self.lambda_b,
            _ => 0.0,
        }
    }

    pub fn effective_lambda_r(&self) -> f64 {
        match self.intrinsic {
            IntrinsicMode::Reward | IntrinsicMode::Both => self.lambda_r,
            _ => 0.0,
        }
    }
}

/// A frozen, archived policy with its threshold and optional reward predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    label: usize,
    policy: CategoricalPolicy,
    delta: f64,
    predictor: Option<RewardPredictor>,
    param_hash: u64,
}

impl ReferencePolicy {
    pub fn new(label: usize, policy: CategoricalPolicy, delta: f64, predictor: Option<RewardPredictor>) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("reference {label}: threshold must be finite and non-negative, got {delta}")));
        }
        let param_hash = params_hash(&policy.net.params);
        Ok(Self {
            label,
            policy,
            delta,
            predictor,
            param_hash,
        })
    }

    pub fn label(&self) -> usize {
        self.label
    }
    pub fn policy(&self) -> &CategoricalPolicy {
        &self.policy
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn predictor(&self) -> Option<&RewardPredictor> {
        self.predictor.as_ref()
    }
    pub fn param_hash(&self) -> u64 {
        self.param_hash
    }
}

/// FNV-1a over the parameters' bit patterns.
pub fn params_hash(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Append-only collection of references.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceArchive {
    refs: Vec<ReferencePolicy>,
}

impl ReferenceArchive {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn push(&mut self, r: ReferencePolicy) {
        self.refs.push(r);
    }
    pub fn len(&self) -> usize {
        self.refs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = &ReferencePolicy> {
        self.refs.iter()
    }
    pub fn get(&self, i: usize) -> Option<&ReferencePolicy> {
        self.refs.get(i)
    }

    /// True when every reference's parameters still hash to their insertion value.
    pub fn verify_integrity(&self) -> bool {
        self.refs.iter().all(|r| params_hash(&r.policy.net.params) == r.param_hash)
    }
}

/// Per-step log-probabilities of the taken actions, floored.
fn floored_log_probs(traj: &Trajectory, reference: &dyn Policy) -> Result<Vec<f64>> {
    traj.steps
        .iter()
        .map(|s| Ok(reference.log_prob(&s.observation, s.action)?.max(LOG_PROB_FLOOR)))
        .collect()
}

/// `phi_j(tau)`: whether the trajectory is far enough from reference `j`.
pub fn filter_indicator(traj: &Trajectory, reference: &ReferencePolicy, norm: NllNormalization) -> Result<bool> {
    let nll: f64 = -floored_log_probs(traj, &reference.policy)?.iter().sum::<f64>();
    Ok(norm.apply(nll, traj.len()) >= reference.delta)
}

/// `phi(tau)`: product of every reference's indicator; true for an empty archive.
pub fn acceptance(traj: &Trajectory, archive: &ReferenceArchive, norm: NllNormalization) -> Result<bool> {
    for r in archive.iter() {
        if !filter_indicator(traj, r, norm)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `-log pi_j(a|s)`, capped at the NLL floor.
pub fn behavior_intrinsic(obs: &[f64], action: usize, reference: &dyn Policy) -> Result<f64> {
    Ok(-reference.log_prob(obs, action)?.max(LOG_PROB_FLOOR))
}

/// Running averages of the per-reference indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub phi: Vec<f64>,
    pub momentum: f64,
}

impl SwitchState {
    pub fn new(n_refs: usize, momentum: f64) -> Self {
        Self {
            phi: vec![1.0; n_refs],
            momentum,
        }
    }
}

/// `phi_j <- m phi_j + (1 - m) mean_batch(phi_j)`.
pub fn update_switch_state(state: &mut SwitchState, batch_means: &[f64]) {
    for (phi, mean) in state.phi.iter_mut().zip(batch_means) {
        *phi = (state.momentum * *phi + (1.0 - state.momentum) * mean).clamp(0.0, 1.0);
    }
}

/// Everything the reward computation needs about one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryScore {
    /// Floored log-probabilities of the taken actions under each reference.
    pub ref_log_probs: Vec<Vec<f64>>,
    pub indicators: Vec<bool>,
}

impl TrajectoryScore {
    pub fn accepted(&self) -> bool {
        self.indicators.iter().all(|b| *b)
    }
}

pub fn score_trajectory(traj: &Trajectory, archive: &ReferenceArchive, norm: NllNormalization) -> Result<TrajectoryScore> {
    let mut ref_log_probs = Vec::with_capacity(archive.len());
    let mut indicators = Vec::with_capacity(archive.len());
    for r in archive.iter() {
        let lps = floored_log_probs(traj, &r.policy)?;
        let nll = -lps.iter().sum::<f64>();
        indicators.push(norm.apply(nll, traj.len()) >= r.delta);
        ref_log_probs.push(lps);
    }
    Ok(TrajectoryScore { ref_log_probs, indicators })
}

pub fn score_batch(batch: &RolloutBatch, archive: &ReferenceArchive, norm: NllNormalization) -> Result<Vec<TrajectoryScore>> {
    batch.trajectories.par_iter().map(|t| score_trajectory(t, archive, norm)).collect()
}

/// Per-step training reward for a scored trajectory.
pub fn shaped_rewards(traj: &Trajectory, score: &TrajectoryScore, archive: &ReferenceArchive, cfg: &RspoConfig, switch: Option<&SwitchState>) -> Result<Vec<f64>> {
    let extrinsic: Vec<f64> = traj.rewards().collect();
    match cfg.objective {
        Objective::PgRestarts => return Ok(extrinsic),
        Objective::NoSwitch => {
            let mut r = extrinsic;
            for lps in &score.ref_log_probs {
                for (rt, lp) in r.iter_mut().zip(lps) {
                    *rt += cfg.beta * -lp;
                }
            }
            return Ok(r);
        }
        Objective::Switch => {}
    }
    let accepted = score.accepted();
    let mut r: Vec<f64> = if accepted { extrinsic } else { vec![0.0; traj.len()] };
    let (lb, lr) = (cfg.effective_lambda_b(), cfg.effective_lambda_r());
    if lb == 0.0 && lr == 0.0 {
        return Ok(r);
    }
    if cfg.smoothed && switch.is_none() {
        return Err(Error::Usage("smoothed switching requires an initialized switch state".into()));
    }
    for (j, reference) in archive.iter().enumerate() {
        let weight = match switch.filter(|_| cfg.smoothed) {
            Some(s) => 1.0 - s.phi[j],
            None if score.indicators[j] => 0.0,
            None => 1.0,
        };
        if weight == 0.0 {
            continue;
        }
        for (t, step) in traj.steps.iter().enumerate() {
            let mut bonus = lb * -score.ref_log_probs[j][t];
            if lr > 0.0 {
                if let Some(p) = reference.predictor() {
                    bonus += lr * reward_intrinsic(&step.observation, step.action, step.reward, p)?;
                }
            }
            r[t] += weight * bonus;
        }
    }
    Ok(r)
}

/// Training reward for one trajectory against the archive.
pub fn rspo_reward(traj: &Trajectory, archive: &ReferenceArchive, cfg: &RspoConfig, switch: Option<&SwitchState>) -> Result<Vec<f64>> {
    let score = score_trajectory(traj, archive, cfg.nll_normalization)?;
    shaped_rewards(traj, &score, archive, cfg, switch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;
    use crate::neural::{Mlp, MlpSpec};

    /// Reference whose log-probabilities are `log_softmax(bias)` in every state.
    fn constant_ref(label: usize, bias: &[f64], delta: f64) -> ReferencePolicy {
        let spec = MlpSpec::new(1, 2, bias.len()).unwrap();
        let mut net = Mlp::zeros(spec);
        let n = net.params.len();
        net.params[n - bias.len()..].copy_from_slice(bias);
        ReferencePolicy::new(label, CategoricalPolicy { net }, delta, None).unwrap()
    }

    fn traj(actions: &[usize], rewards: &[f64]) -> Trajectory {
        Trajectory {
            steps: actions
                .iter()
                .zip(rewards)
                .map(|(&a, &r)| Step {
                    observation: vec![0.0],
                    action: a,
                    reward: r,
                    log_prob: 0.0,
                })
                .collect(),
            done: true,
            agent_id: 0,
            final_observation: vec![0.0],
        }
    }

    fn behavior_cfg() -> RspoConfig {
        RspoConfig {
            lambda_b: 1.0,
            lambda_r: 0.0,
            intrinsic: IntrinsicMode::Behavior,
            ..RspoConfig::four_goals()
        }
    }

    #[test]
    fn indicator_is_inclusive_at_threshold() {
        let r = constant_ref(0, &[0.0, 0.0], 2.0 * 2f64.ln());
        assert!(filter_indicator(&traj(&[0, 1], &[0.0, 0.0]), &r, NllNormalization::Sum).unwrap());
        let r2 = constant_ref(0, &[0.0, 0.0], 2.0 * 2f64.ln() + 1e-9);
        assert!(!filter_indicator(&traj(&[0, 1], &[0.0, 0.0]), &r2, NllNormalization::Sum).unwrap());
    }

    #[test]
    fn empty_archive_accepts_and_passes_rewards_through() {
        let t = traj(&[0, 1, 1], &[0.5, -1.0, 2.0]);
        let archive = ReferenceArchive::new();
        assert!(acceptance(&t, &archive, NllNormalization::Sum).unwrap());
        assert_eq!(rspo_reward(&t, &archive, &behavior_cfg(), None).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn accepted_trajectory_gets_extrinsic_only() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[0.0, 0.0], 0.1));
        let t = traj(&[0, 1], &[1.0, 3.0]);
        assert_eq!(rspo_reward(&t, &archive, &behavior_cfg(), None).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn rejected_trajectory_gets_behavior_intrinsic_only() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[2.0, 0.0], 100.0));
        let t = traj(&[0, 1, 0], &[1.0, 3.0, 5.0]);
        let r = rspo_reward(&t, &archive, &behavior_cfg(), None).unwrap();
        let lp = crate::neural::log_softmax(&[2.0, 0.0]);
        let expected = [-lp[0], -lp[1], -lp[0]];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn violations_of_several_references_are_summed() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[0.0, 0.0], 100.0));
        archive.push(constant_ref(1, &[0.0, 0.0, 0.0][..2], 100.0));
        let t = traj(&[1], &[7.0]);
        let r = rspo_reward(&t, &archive, &behavior_cfg(), None).unwrap();
        assert!((r[0] - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_intrinsic_zeroes_rejected_rewards() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[0.0, 0.0], 100.0));
        let t = traj(&[1, 0], &[7.0, 1.0]);
        assert_eq!(rspo_reward(&t, &archive, &RspoConfig::four_goals(), None).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn soft_objective_keeps_extrinsic_and_adds_penalty() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[0.0, 0.0], 100.0));
        let cfg = RspoConfig {
            objective: Objective::NoSwitch,
            beta: 0.5,
            ..behavior_cfg()
        };
        let t = traj(&[1, 0], &[7.0, 1.0]);
        let r = rspo_reward(&t, &archive, &cfg, None).unwrap();
        let bonus = 0.5 * 2f64.ln();
        assert!((r[0] - (7.0 + bonus)).abs() < 1e-12);
        assert!((r[1] - (1.0 + bonus)).abs() < 1e-12);
        let switched = rspo_reward(&t, &archive, &behavior_cfg(), None).unwrap();
        assert_ne!(r, switched);
    }

    #[test]
    fn smoothed_mode_needs_state_and_uses_running_average() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[0.0, 0.0], 0.0));
        let cfg = RspoConfig { smoothed: true, ..behavior_cfg() };
        let t = traj(&[1], &[2.0]);
        assert!(matches!(rspo_reward(&t, &archive, &cfg, None), Err(Error::Usage(_))));
        let state = SwitchState {
            phi: vec![0.75],
            momentum: 0.0,
        };
        let r = rspo_reward(&t, &archive, &cfg, Some(&state)).unwrap();
        assert!((r[0] - (2.0 + 0.25 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn switch_state_updates() {
        let mut s = SwitchState::new(1, 0.5);
        s.phi[0] = 1.0;
        update_switch_state(&mut s, &[0.5]);
        assert_eq!(s.phi[0], 0.75);
        let mut z = SwitchState::new(2, 0.0);
        update_switch_state(&mut z, &[0.3, 0.9]);
        assert_eq!(z.phi, vec![0.3, 0.9]);
        let mut one = SwitchState::new(1, 0.9);
        one.phi[0] = 0.0;
        for _ in 0..500 {
            update_switch_state(&mut one, &[1.0]);
        }
        assert!((one.phi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn behavior_intrinsic_is_capped() {
        let u = crate::mdp::UniformPolicy { obs_dim: 1, n_actions: 5 };
        assert!((behavior_intrinsic(&[0.0], 3, &u).unwrap() - 5f64.ln()).abs() < 1e-12);
        let r = constant_ref(0, &[1000.0, 0.0], 1.0);
        assert_eq!(behavior_intrinsic(&[0.0], 1, r.policy()).unwrap(), 50.0);
        assert!(behavior_intrinsic(&[0.0], 0, r.policy()).unwrap() < 1e-12);
    }

    #[test]
    fn archive_integrity() {
        let mut archive = ReferenceArchive::new();
        archive.push(constant_ref(0, &[0.0, 1.0], 1.0));
        assert!(archive.verify_integrity());
        assert!(ReferencePolicy::new(1, archive.get(0).unwrap().policy().clone(), f64::NAN, None).is_err());
    }
}
