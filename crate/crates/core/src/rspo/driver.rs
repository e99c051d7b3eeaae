//! The iterative discovery loop.

use serde::{Deserialize, Serialize};

use super::{score_batch, shaped_rewards, train_reward_predictor, update_switch_state, NllNormalization, Objective, ReferenceArchive, ReferencePolicy, RspoConfig, SwitchState};
use crate::diversity::trajectory_nll;
use crate::error::{Error, Result};
use crate::mdp::{collect_batch, derive_seed, EnvFactory, Policy, RolloutBatch, UniformPolicy};
use crate::ppo::{extrinsic, train, Learner, PpoConfig, ShapedBatch, TrainingSchedule, UpdateStats};

/// `alpha * D(pi_rnd, pi_j)`, with the cross-entropy normalized as configured.
pub fn auto_threshold(reference: &dyn Policy, factory: &dyn EnvFactory, alpha: f64, n_traj: usize, horizon: usize, norm: NllNormalization, seed: u64) -> Result<f64> {
    if n_traj == 0 {
        return Err(Error::Config("threshold estimation needs at least one episode".into()));
    }
    let random = UniformPolicy {
        obs_dim: reference.obs_dim(),
        n_actions: reference.n_actions(),
    };
    let batch = collect_batch(&random, factory, n_traj, horizon, seed)?;
    let mut total = 0.0;
    for t in &batch.trajectories {
        total += norm.apply(trajectory_nll(t, reference)?.value, t.len());
    }
    Ok(alpha * total / batch.trajectories.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub seed: u64,
    pub delta: f64,
    pub alpha: f64,
    pub acceptance_curve: Vec<f64>,
    pub history: Vec<UpdateStats>,
    /// Why training stopped early, if it did.
    pub failure: Option<String>,
    pub predictor_mse: Option<f64>,
}

impl IterationDiagnostics {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Mean acceptance rate over the last `n` updates.
    pub fn final_acceptance(&self, n: usize) -> f64 {
        let tail = &self.acceptance_curve[self.acceptance_curve.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

pub struct IterationOutcome {
    pub reference: ReferencePolicy,
    pub learner: Learner,
    pub diagnostics: IterationDiagnostics,
}

fn shape_batch(batch: RolloutBatch, archive: &ReferenceArchive, cfg: &RspoConfig, switch: &mut Option<SwitchState>) -> Result<ShapedBatch> {
    if archive.is_empty() || cfg.objective == Objective::PgRestarts {
        return Ok(extrinsic(batch));
    }
    let scores = score_batch(&batch, archive, cfg.nll_normalization)?;
    let n = scores.len() as f64;
    let accepted = scores.iter().filter(|s| s.accepted()).count();
    let acceptance_rate = accepted as f64 / n;
    if let Some(state) = switch.as_mut() {
        let means: Vec<f64> = (0..archive.len())
            .map(|j| scores.iter().filter(|s| s.indicators[j]).count() as f64 / n)
            .collect();
        update_switch_state(state, &means);
    }
    let discard_rejected = cfg.objective == Objective::Switch && cfg.effective_lambda_b() == 0.0 && cfg.effective_lambda_r() == 0.0;
    let mut rewards = Vec::with_capacity(batch.trajectories.len());
    let mut kept = Vec::with_capacity(batch.trajectories.len());
    for (traj, score) in batch.trajectories.into_iter().zip(&scores) {
        if discard_rejected && !score.accepted() {
            continue;
        }
        rewards.push(shaped_rewards(&traj, score, archive, cfg, switch.as_ref())?);
        kept.push(traj);
    }
    Ok(ShapedBatch {
        batch: RolloutBatch {
            trajectories: kept,
            env_seed_base: batch.env_seed_base,
        },
        rewards,
        acceptance_rate,
    })
}

/// Trains one new policy against `archive` and freezes it as reference `archive.len()`.
pub fn rspo_iteration(archive: &ReferenceArchive, factory: &dyn EnvFactory, ppo: &PpoConfig, cfg: &RspoConfig, schedule: &TrainingSchedule, seed: u64) -> Result<IterationOutcome> {
    cfg.validate()?;
    let iteration = archive.len();
    let horizon = factory.make().horizon();
    let mut switch = cfg.smoothed.then(|| SwitchState::new(archive.len(), cfg.momentum));
    let outcome = train(factory, ppo, schedule, seed, |_, batch, _| shape_batch(batch, archive, cfg, &mut switch))?;
    if let Some(e) = &outcome.failure {
        log::warn!("iteration {iteration} stopped early: {e}");
    }
    let policy = outcome.learner.policy.clone();
    let delta = auto_threshold(&policy, factory, cfg.alpha, cfg.threshold_episodes, horizon, cfg.nll_normalization, derive_seed(&[seed, 0xD1]))?;
    let (predictor, predictor_mse) = if cfg.effective_lambda_r() > 0.0 {
        let (p, mse) = train_reward_predictor(&policy, factory, horizon, &cfg.predictor, derive_seed(&[seed, 0xD2]))?;
        (Some(p), Some(mse))
    } else {
        (None, None)
    };
    let reference = ReferencePolicy::new(iteration, policy, delta, predictor)?;
    let diagnostics = IterationDiagnostics {
        iteration,
        seed,
        delta,
        alpha: cfg.alpha,
        acceptance_curve: outcome.history.iter().map(|h| h.acceptance_rate).collect(),
        history: outcome.history,
        failure: outcome.failure.map(|e| e.to_string()),
        predictor_mse,
    };
    Ok(IterationOutcome {
        reference,
        learner: outcome.learner,
        diagnostics,
    })
}

pub struct RunOutcome {
    pub archive: ReferenceArchive,
    pub learners: Vec<Learner>,
    pub iterations: Vec<IterationDiagnostics>,
}

/// Runs `cfg.iterations` sequential iterations. `on_iteration` sees each
/// finished iteration (for persistence or logging) before the next starts.
pub fn rspo_run<F>(factory: &dyn EnvFactory, ppo: &PpoConfig, cfg: &RspoConfig, schedule: &TrainingSchedule, seed: u64, mut on_iteration: F) -> Result<RunOutcome>
where
    F: FnMut(&IterationOutcome, &ReferenceArchive) -> Result<()>,
{
    cfg.validate()?;
    let mut archive = ReferenceArchive::new();
    let mut learners = Vec::with_capacity(cfg.iterations);
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        // Restarts ignore the archive entirely but still get fresh seeds.
        let context = if cfg.objective == Objective::PgRestarts { ReferenceArchive::new() } else { archive.clone() };
        let out = rspo_iteration(&context, factory, ppo, cfg, schedule, derive_seed(&[seed, k as u64]))?;
        let reference = ReferencePolicy::new(k, out.reference.policy().clone(), out.reference.delta(), out.reference.predictor().cloned())?;
        log::info!(
            "iteration {k}: delta {:.3}, final acceptance {:.3}{}",
            out.diagnostics.delta,
            out.diagnostics.final_acceptance(10),
            if out.diagnostics.failed() { " (failed)" } else { "" }
        );
        on_iteration(&out, &archive)?;
        archive.push(reference);
        iterations.push(out.diagnostics);
        learners.push(out.learner);
        if !archive.verify_integrity() {
            return Err(Error::Numeric {
                step: k,
                what: "archived reference parameters changed".into(),
            });
        }
    }
    Ok(RunOutcome {
        archive,
        learners,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Bandit;
    use crate::mdp::Environment;
    use crate::ppo::train_ppo;

    fn small_ppo() -> PpoConfig {
        PpoConfig {
            batch_size: 64,
            minibatch_size: 64,
            initial_learning_rate: 1e-3,
            ..PpoConfig::four_goals()
        }
    }

    #[test]
    fn uniform_reference_threshold_closed_form() {
        let factory = || Box::new(Bandit::new(vec![0.0; 5])) as Box<dyn Environment>;
        let u = UniformPolicy { obs_dim: 1, n_actions: 5 };
        let d = auto_threshold(&u, &factory, 0.6, 10, 1, NllNormalization::Sum, 0).unwrap();
        assert!((d - 0.6 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_archive_iteration_is_plain_ppo() {
        let factory = || Box::new(Bandit::new(vec![1.0, 0.0, 0.3])) as Box<dyn Environment>;
        let schedule = TrainingSchedule {
            env_steps: 64 * 15,
            ..Default::default()
        };
        let cfg = RspoConfig {
            threshold_episodes: 8,
            ..RspoConfig::stag_hunt(1)
        };
        let a = rspo_iteration(&ReferenceArchive::new(), &factory, &small_ppo(), &cfg, &schedule, 17).unwrap();
        let b = train_ppo(&factory, &small_ppo(), &schedule, 17).unwrap();
        assert_eq!(a.learner, b.learner);
        assert_eq!(a.diagnostics.history, b.history);
    }

    #[test]
    fn bandit_second_iteration_finds_other_arm() {
        let factory = || Box::new(Bandit::new(vec![1.0, 0.8, 0.0])) as Box<dyn Environment>;
        let schedule = TrainingSchedule {
            env_steps: 64 * 150,
            ..Default::default()
        };
        let cfg = RspoConfig {
            iterations: 2,
            intrinsic: super::super::IntrinsicMode::Behavior,
            lambda_b: 0.2,
            threshold_episodes: 64,
            ..RspoConfig::four_goals()
        };
        let out = rspo_run(&factory, &small_ppo(), &cfg, &schedule, 5, |_, _| Ok(())).unwrap();
        let best = |k: usize| {
            let lp = out.archive.get(k).unwrap().policy().log_probs(&[1.0]).unwrap();
            (0..3).max_by(|a, b| lp[*a].total_cmp(&lp[*b])).unwrap()
        };
        assert_eq!(best(0), 0);
        assert_eq!(best(1), 1);
        assert!(out.iterations[1].final_acceptance(10) > 0.9);
        assert!(out.archive.verify_integrity());
    }

    #[test]
    fn discard_mode_reports_no_accepted_trajectories() {
        let factory = || Box::new(Bandit::new(vec![1.0, 0.0])) as Box<dyn Environment>;
        let learner = Learner::new(1, 2, &small_ppo(), 0).unwrap();
        let mut archive = ReferenceArchive::new();
        // Threshold no single-step trajectory can reach.
        archive.push(ReferencePolicy::new(0, learner.policy.clone(), 1e6, None).unwrap());
        let cfg = RspoConfig {
            threshold_episodes: 4,
            ..RspoConfig::four_goals()
        };
        let schedule = TrainingSchedule {
            env_steps: 64 * 3,
            ..Default::default()
        };
        let out = rspo_iteration(&archive, &factory, &small_ppo(), &cfg, &schedule, 1).unwrap();
        assert!(out.diagnostics.failure.as_deref().unwrap().contains("no accepted trajectories in update 0"));
        assert!(out.diagnostics.history.is_empty());
    }
}
