//! RSPO on Escalation. Later iterations should cooperate for longer, ideally the
//! whole episode. Rejected trajectories earn a much smaller behaviour bonus
//! than the stag-hunt default, so hovering just under the novelty threshold
//! does not pay more than cooperating.
//!
//! `cargo run --release --example escalation -- [iterations] [env_steps]`

use rspo::analysis::classify_escalation;
use rspo::envs::{EnvConfig, EnvKind, EscalationConfig};
use rspo::ppo::{PpoConfig, TrainingSchedule};
use rspo::rspo::{rspo_run, NllNormalization, RspoConfig};

fn main() -> rspo::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let env_steps = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4_000_000);
    let env_cfg = EscalationConfig::default();
    let env = EnvConfig::Escalation(env_cfg);
    let cfg = RspoConfig {
        iterations,
        nll_normalization: NllNormalization::PerStep,
        lambda_b: 0.002,
        ..RspoConfig::for_env(EnvKind::Escalation)
    };
    let schedule = TrainingSchedule {
        env_steps,
        early_stop: true,
        ..Default::default()
    };
    rspo_run(&env, &PpoConfig::escalation(), &cfg, &schedule, 0, |it, _| {
        let e = classify_escalation(&it.learner.policy, &env_cfg, 64, 5)?;
        println!(
            "iteration {}: {} (mean cooperation {:.1} steps, return {:.2}, final acceptance {:.2})",
            it.diagnostics.iteration,
            e.label,
            e.mean_length,
            e.returns.mean,
            it.diagnostics.final_acceptance(10)
        );
        Ok(())
    })?;
    Ok(())
}
