//! RSPO on 4-Goals: each iteration should head for a landmark the archive has not
//! visited yet.
//!
//! `cargo run --release --example four_goals -- [easy|hard] [iterations] [env_steps]`

use rspo::analysis::{classify_four_goals, distinct_mode_count};
use rspo::envs::{EnvConfig, FourGoalsConfig, FourGoalsMode};
use rspo::ppo::{PpoConfig, TrainingSchedule};
use rspo::rspo::{rspo_run, NllNormalization, RspoConfig};

fn main() -> rspo::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mode = if args.get(1).map(String::as_str) == Some("hard") { FourGoalsMode::Hard } else { FourGoalsMode::Easy };
    let iterations = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let env_steps = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1_500_000);
    let env_cfg = FourGoalsConfig::with_mode(mode);
    let env = EnvConfig::FourGoals(env_cfg);
    let cfg = RspoConfig {
        iterations,
        nll_normalization: NllNormalization::PerStep,
        ..RspoConfig::four_goals()
    };
    let schedule = TrainingSchedule {
        env_steps,
        early_stop: true,
        ..Default::default()
    };
    let mut labels = Vec::new();
    rspo_run(&env, &PpoConfig::four_goals(), &cfg, &schedule, 0, |it, _| {
        let e = classify_four_goals(&it.learner.policy, &env_cfg, 64, 99)?;
        println!(
            "iteration {}: {} (goal counts {:?}, return {:.2}, delta {:.3})",
            it.diagnostics.iteration, e.label, e.goal_counts, e.returns.mean, it.diagnostics.delta
        );
        labels.push(e.label);
        Ok(())
    })?;
    println!("distinct modes: {}", distinct_mode_count(&labels));
    Ok(())
}
