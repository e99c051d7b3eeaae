//! PPO with separate policy and value networks.
//!
//! [`ppo_update`] consumes a rollout batch together with a per-step reward
//! sequence for every trajectory, so callers can substitute shaped rewards
//! (the diversity driver does exactly that). [`train`] is the update loop
//! shared by plain PPO and every discovery iteration.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{collect_batch, derive_seed, EnvFactory, RolloutBatch};
use crate::neural::{adam_step, clip_global_norm, entropy, log_softmax, AdamState, CategoricalPolicy, ValueFunction};

/// Hyperparameters; names follow the usual PPO hyperparameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub hidden_size: usize,
    pub initial_learning_rate: f64,
    /// Nominal environment samples per update.
    pub batch_size: usize,
    pub minibatch_size: usize,
    /// Adam epsilon.
    pub adam_stepsize: f64,
    pub discount_rate: f64,
    pub gae_lambda: f64,
    pub value_loss_coeff: f64,
    pub entropy_coeff: f64,
    pub gradient_clipping: f64,
    pub ppo_clipping_parameter: f64,
    pub ppo_epochs: usize,
    pub advantage_normalization: bool,
    pub value_normalization: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::four_goals()
    }
}

impl PpoConfig {
    pub fn four_goals() -> Self {
        Self {
            hidden_size: 64,
            initial_learning_rate: 3e-4,
            batch_size: 8192,
            minibatch_size: 8192,
            adam_stepsize: 1e-5,
            discount_rate: 0.99,
            gae_lambda: 0.95,
            value_loss_coeff: 0.5,
            entropy_coeff: 0.05,
            gradient_clipping: 0.5,
            ppo_clipping_parameter: 0.2,
            ppo_epochs: 4,
            advantage_normalization: true,
            value_normalization: true,
        }
    }

    fn stag_hunt(batch: usize) -> Self {
        Self {
            initial_learning_rate: 1e-3,
            batch_size: batch,
            minibatch_size: batch,
            value_loss_coeff: 1.0,
            entropy_coeff: 0.01,
            ..Self::four_goals()
        }
    }

    pub fn monster_hunt() -> Self {
        Self::stag_hunt(12800)
    }

    pub fn escalation() -> Self {
        Self::stag_hunt(6400)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.discount_rate > 0.0 && self.discount_rate <= 1.0) {
            return bad("discount_rate must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if self.ppo_clipping_parameter <= 0.0 || self.ppo_clipping_parameter.is_nan() {
            return bad("ppo_clipping_parameter must be positive");
        }
        if self.hidden_size == 0 || self.batch_size == 0 || self.minibatch_size == 0 {
            return bad("hidden_size, batch_size and minibatch_size must be positive");
        }
        if self.initial_learning_rate <= 0.0 || self.adam_stepsize <= 0.0 {
            return bad("initial_learning_rate and adam_stepsize must be positive");
        }
        Ok(())
    }
}

/// Generalized advantage estimates for one trajectory.
///
/// `values[t]` estimates the state before step `t`; `bootstrap` is the value
/// after the last step (zero for terminal states).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// Zero-mean, unit-variance rescaling; constant inputs map to zeros.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        xs.iter_mut().for_each(|x| *x = 0.0);
    } else {
        xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
    }
}

/// Running mean and variance of value targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningMeanStd {
    fn default() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            count: 1e-4,
        }
    }
}

impl RunningMeanStd {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-6)
    }
}

/// Policy, value function and their optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub policy: CategoricalPolicy,
    pub value: ValueFunction,
    pub policy_opt: AdamState,
    pub value_opt: AdamState,
    pub value_norm: RunningMeanStd,
    pub value_normalization: bool,
    shuffle_seed: u64,
    updates: u64,
}

impl Learner {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: &PpoConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xA1]));
        let policy = CategoricalPolicy::new(obs_dim, cfg.hidden_size, n_actions, &mut rng)?;
        let value = ValueFunction::new(obs_dim, cfg.hidden_size, &mut rng)?;
        let policy_opt = AdamState::new(policy.net.params.len(), cfg.initial_learning_rate, cfg.adam_stepsize);
        let value_opt = AdamState::new(value.net.params.len(), cfg.initial_learning_rate, cfg.adam_stepsize);
        Ok(Self {
            policy,
            value,
            policy_opt,
            value_opt,
            value_norm: RunningMeanStd::default(),
            value_normalization: cfg.value_normalization,
            shuffle_seed: derive_seed(&[seed, 0xB2]),
            updates: 0,
        })
    }

    /// State value in reward units.
    pub fn state_value(&self, obs: &[f64]) -> Result<f64> {
        let v = self.value.value(obs)?;
        Ok(if self.value_normalization {
            v * self.value_norm.std() + self.value_norm.mean
        } else {
            v
        })
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub acceptance_rate: f64,
    /// Mean undiscounted extrinsic return per trajectory in the sampled batch.
    pub mean_return: f64,
    pub n_samples: usize,
}

/// Flattened per-sample training data.
pub struct Prepared<'a> {
    pub obs: Vec<&'a [f64]>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

/// Computes advantages and (possibly normalized) value targets; updates the
/// learner's running return statistics.
pub fn prepare<'a>(learner: &mut Learner, batch: &'a RolloutBatch, rewards: &[Vec<f64>], cfg: &PpoConfig) -> Result<Prepared<'a>> {
    if batch.trajectories.is_empty() || batch.n_steps() == 0 {
        return Err(Error::NoAcceptedTrajectories { update: learner.updates as usize });
    }
    if rewards.len() != batch.trajectories.len() {
        return Err(Error::Shape {
            expected: batch.trajectories.len(),
            got: rewards.len(),
            context: "reward override trajectories",
        });
    }
    let per_traj: Vec<(Vec<f64>, Vec<f64>)> = batch
        .trajectories
        .par_iter()
        .zip(rewards.par_iter())
        .map(|(traj, r)| -> Result<(Vec<f64>, Vec<f64>)> {
            if r.len() != traj.len() {
                return Err(Error::Shape {
                    expected: traj.len(),
                    got: r.len(),
                    context: "reward override steps",
                });
            }
            let values = traj.steps.iter().map(|s| learner.state_value(&s.observation)).collect::<Result<Vec<_>>>()?;
            let bootstrap = if traj.done { 0.0 } else { learner.state_value(&traj.final_observation)? };
            let adv = gae(r, &values, bootstrap, cfg.discount_rate, cfg.gae_lambda);
            let returns = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
            Ok((adv, returns))
        })
        .collect::<Result<_>>()?;

    let mut advantages = Vec::with_capacity(batch.n_steps());
    let mut returns = Vec::with_capacity(batch.n_steps());
    for (a, r) in per_traj {
        advantages.extend(a);
        returns.extend(r);
    }
    if cfg.advantage_normalization {
        normalize(&mut advantages);
    }
    let value_targets = if learner.value_normalization {
        learner.value_norm.update(&returns);
        let (m, s) = (learner.value_norm.mean, learner.value_norm.std());
        returns.iter().map(|r| (r - m) / s).collect()
    } else {
        returns
    };
    let steps = batch.trajectories.iter().flat_map(|t| t.steps.iter());
    let (mut obs, mut actions, mut old_log_probs) = (Vec::new(), Vec::new(), Vec::new());
    for s in steps {
        obs.push(s.observation.as_slice());
        actions.push(s.action);
        old_log_probs.push(s.log_prob);
    }
    Ok(Prepared {
        obs,
        actions,
        old_log_probs,
        advantages,
        value_targets,
    })
}

struct PolicyGrad {
    grad: Vec<f64>,
    loss: f64,
    entropy: f64,
    approx_kl: f64,
    clipped: f64,
}

/// Gradient of the clipped-surrogate loss minus the entropy bonus, averaged over `idx`.
fn surrogate_gradient(policy: &CategoricalPolicy, data: &Prepared, idx: &[usize], clip: f64, entropy_coeff: f64) -> PolicyGrad {
    let n = idx.len() as f64;
    // Per-sample diagnostics, written once each so the reduction order is fixed.
    let stats: Vec<[AtomicU64; 3]> = idx.iter().map(|_| Default::default()).collect();
    let (grad, loss) = policy.net.batch_gradient(
        idx.len(),
        |k| data.obs[idx[k]],
        |k, logits| {
            let i = idx[k];
            let lp = log_softmax(logits);
            let a = data.actions[i];
            let adv = data.advantages[i];
            let log_ratio = lp[a] - data.old_log_probs[i];
            let ratio = log_ratio.exp();
            let surr1 = ratio * adv;
            let surr2 = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
            let active = surr1 <= surr2;
            let g = if active { ratio * adv } else { 0.0 };
            let h = entropy(&lp);
            let mut up: Vec<f64> = lp.iter().map(|l| g * l.exp() + entropy_coeff * l.exp() * (l + h)).collect();
            up[a] -= g;
            up.iter_mut().for_each(|u| *u /= n);
            let clipped = if active { 0.0 } else { 1.0 };
            for (slot, v) in stats[k].iter().zip([h, (ratio - 1.0) - log_ratio, clipped]) {
                slot.store(v.to_bits(), Ordering::Relaxed);
            }
            (up, (-surr1.min(surr2) - entropy_coeff * h) / n)
        },
    );
    let total = |j: usize| stats.iter().map(|s| f64::from_bits(s[j].load(Ordering::Relaxed))).sum::<f64>();
    let (h, kl, clipped) = (total(0), total(1), total(2));
    PolicyGrad {
        grad,
        loss,
        entropy: h / n,
        approx_kl: kl / n,
        clipped: clipped / n,
    }
}

fn value_gradient(value: &ValueFunction, data: &Prepared, idx: &[usize], coeff: f64) -> (Vec<f64>, f64) {
    let n = idx.len() as f64;
    value.net.batch_gradient(
        idx.len(),
        |k| data.obs[idx[k]],
        |k, out| {
            let err = out[0] - data.value_targets[idx[k]];
            (vec![2.0 * coeff * err / n], coeff * err * err / n)
        },
    )
}

/// One PPO update: `ppo_epochs` passes of shuffled minibatch steps.
pub fn ppo_update(learner: &mut Learner, batch: &RolloutBatch, rewards: &[Vec<f64>], cfg: &PpoConfig) -> Result<UpdateStats> {
    let data = prepare(learner, batch, rewards, cfg)?;
    let n = data.obs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[learner.shuffle_seed, learner.updates]));
    let mut stats = UpdateStats {
        n_samples: n,
        ..Default::default()
    };
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(&mut rng);
        let (mut pl, mut vl, mut h, mut kl, mut cf, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for mb in order.chunks(cfg.minibatch_size.max(1)) {
            let w = mb.len() as f64;
            let mut pg = surrogate_gradient(&learner.policy, &data, mb, cfg.ppo_clipping_parameter, cfg.entropy_coeff);
            clip_global_norm(&mut pg.grad, cfg.gradient_clipping);
            adam_step(&mut learner.policy.net.params, &pg.grad, &mut learner.policy_opt)?;
            let (mut vg, vloss) = value_gradient(&learner.value, &data, mb, cfg.value_loss_coeff);
            clip_global_norm(&mut vg, cfg.gradient_clipping);
            adam_step(&mut learner.value.net.params, &vg, &mut learner.value_opt)?;
            pl += pg.loss * w;
            vl += vloss * w;
            h += pg.entropy * w;
            kl += pg.approx_kl * w;
            cf += pg.clipped * w;
            count += w;
        }
        stats.policy_loss = pl / count;
        stats.value_loss = vl / count;
        stats.entropy = h / count;
        stats.approx_kl = kl / count;
        stats.clip_fraction = cf / count;
    }
    if learner.policy.net.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric {
            step: learner.updates as usize,
            what: "policy parameters after update".into(),
        });
    }
    learner.updates += 1;
    Ok(stats)
}

/// A single vanilla policy-gradient step (`-mean(A * grad log pi)`) on the same
/// prepared batch PPO would use; the reference point for the clipped objective.
pub fn policy_gradient_step(learner: &mut Learner, batch: &RolloutBatch, rewards: &[Vec<f64>], cfg: &PpoConfig) -> Result<()> {
    let data = prepare(learner, batch, rewards, cfg)?;
    let n = data.obs.len() as f64;
    let (mut grad, _) = learner.policy.net.batch_gradient(
        data.obs.len(),
        |i| data.obs[i],
        |i, logits| {
            let lp = log_softmax(logits);
            let adv = data.advantages[i];
            let mut up: Vec<f64> = lp.iter().map(|l| adv * l.exp() / n).collect();
            up[data.actions[i]] -= adv / n;
            (up, 0.0)
        },
    );
    clip_global_norm(&mut grad, cfg.gradient_clipping);
    adam_step(&mut learner.policy.net.params, &grad, &mut learner.policy_opt)
}

/// A batch after reward shaping and (optionally) trajectory rejection.
pub struct ShapedBatch {
    pub batch: RolloutBatch,
    pub rewards: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

/// Shaping that keeps every trajectory and its extrinsic rewards.
pub fn extrinsic(batch: RolloutBatch) -> ShapedBatch {
    let rewards = batch.trajectories.iter().map(|t| t.rewards().collect()).collect();
    ShapedBatch {
        batch,
        rewards,
        acceptance_rate: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    /// Environment steps (summed over agents) before training stops.
    pub env_steps: usize,
    /// Stop once acceptance >= 0.99 and the mean return has not improved for
    /// `plateau_updates` updates.
    pub early_stop: bool,
    pub plateau_updates: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            env_steps: 1_000_000,
            early_stop: false,
            plateau_updates: 20,
        }
    }
}

pub struct TrainOutcome {
    pub learner: Learner,
    pub history: Vec<UpdateStats>,
    /// Set when training stopped on an error; the learner holds the last good parameters.
    pub failure: Option<Error>,
}

/// Episodes collected per update so that a full-length batch has `batch_size` samples.
pub fn episodes_per_update(cfg: &PpoConfig, horizon: usize, n_agents: usize) -> usize {
    (cfg.batch_size / (horizon * n_agents).max(1)).max(1)
}

/// The PPO training loop. `shape` turns each sampled batch into training data;
/// [`extrinsic`] gives plain PPO.
pub fn train<S>(factory: &dyn EnvFactory, cfg: &PpoConfig, schedule: &TrainingSchedule, seed: u64, mut shape: S) -> Result<TrainOutcome>
where
    S: FnMut(usize, RolloutBatch, &Learner) -> Result<ShapedBatch>,
{
    cfg.validate()?;
    let probe = factory.make();
    let (obs_dim, n_actions, horizon, n_agents) = (probe.obs_dim(), probe.n_actions(), probe.horizon(), probe.n_agents());
    drop(probe);
    let mut learner = Learner::new(obs_dim, n_actions, cfg, seed)?;
    let episodes = episodes_per_update(cfg, horizon, n_agents);
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut best_return = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut update = 0usize;
    while steps < schedule.env_steps {
        let batch = collect_batch(&learner.policy, factory, episodes, horizon, derive_seed(&[seed, 0xC3, update as u64]))?;
        steps += batch.n_steps();
        let mean_return = batch.trajectories.iter().map(|t| t.total_reward()).sum::<f64>() / batch.trajectories.len() as f64;
        let shaped = match shape(update, batch, &learner) {
            Ok(s) => s,
            Err(e) => {
                return Ok(TrainOutcome {
                    learner,
                    history,
                    failure: Some(e),
                })
            }
        };
        let result = ppo_update(&mut learner, &shaped.batch, &shaped.rewards, cfg);
        let mut stats = match result {
            Ok(s) => s,
            Err(Error::NoAcceptedTrajectories { .. }) => {
                return Ok(TrainOutcome {
                    learner,
                    history,
                    failure: Some(Error::NoAcceptedTrajectories { update }),
                })
            }
            Err(e) => return Err(e),
        };
        stats.update = update;
        stats.mean_return = mean_return;
        stats.acceptance_rate = shaped.acceptance_rate;
        log::debug!(
            "update {update}: return {:.3} accept {:.3} entropy {:.3}",
            stats.mean_return,
            stats.acceptance_rate,
            stats.entropy
        );
        history.push(stats);
        update += 1;
        if schedule.early_stop {
            if mean_return > best_return + 1e-3 {
                best_return = mean_return;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if shaped.acceptance_rate >= 0.99 && since_best >= schedule.plateau_updates {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        learner,
        history,
        failure: None,
    })
}

/// Plain PPO on the environment's own rewards.
pub fn train_ppo(factory: &dyn EnvFactory, cfg: &PpoConfig, schedule: &TrainingSchedule, seed: u64) -> Result<TrainOutcome> {
    train(factory, cfg, schedule, seed, |_, batch, _| Ok(extrinsic(batch)))
}
