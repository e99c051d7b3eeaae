//! Plain PPO on a three-armed bandit.
//!
//! `cargo run --release --example ppo_bandit`

use rspo::envs::Bandit;
use rspo::mdp::{Environment, Policy};
use rspo::neural::softmax;
use rspo::ppo::{train_ppo, PpoConfig, TrainingSchedule};

fn main() -> rspo::Result<()> {
    let factory = || Box::new(Bandit::new(vec![1.0, 0.6, 0.0])) as Box<dyn Environment>;
    let cfg = PpoConfig {
        batch_size: 256,
        minibatch_size: 256,
        initial_learning_rate: 3e-3,
        ..PpoConfig::four_goals()
    };
    let schedule = TrainingSchedule {
        env_steps: 256 * 100,
        ..Default::default()
    };
    let out = train_ppo(&factory, &cfg, &schedule, 0)?;
    for h in out.history.iter().step_by(10) {
        println!("update {:3}  return {:.3}  entropy {:.3}  kl {:.2e}", h.update, h.mean_return, h.entropy, h.approx_kl);
    }
    let probs = softmax(&out.learner.policy.net.forward(&[1.0])?);
    println!("final arm probabilities: {:.3?}", probs);
    debug_assert_eq!(out.learner.policy.n_actions(), 3);
    Ok(())
}
