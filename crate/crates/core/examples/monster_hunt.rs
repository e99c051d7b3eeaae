//! RSPO on Monster-Hunt, printing each iteration's strategy and the agents'
//! meeting-point heatmap.
//!
//! `cargo run --release --example monster_hunt -- [iterations] [env_steps]`

use rspo::analysis::{classify_monster_hunt, MonsterHuntThresholds};
use rspo::envs::{EnvConfig, EnvKind, MonsterHuntConfig};
use rspo::ppo::{PpoConfig, TrainingSchedule};
use rspo::rspo::{rspo_run, RspoConfig};

fn main() -> rspo::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let env_steps = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1_000_000);
    let env_cfg = MonsterHuntConfig::default();
    let env = EnvConfig::MonsterHunt(env_cfg);
    let cfg = RspoConfig {
        iterations,
        ..RspoConfig::for_env(EnvKind::MonsterHunt)
    };
    let schedule = TrainingSchedule {
        env_steps,
        ..Default::default()
    };
    rspo_run(&env, &PpoConfig::monster_hunt(), &cfg, &schedule, 0, |it, _| {
        let e = classify_monster_hunt(&it.learner.policy, &env_cfg, &MonsterHuntThresholds::default(), 64, 5)?;
        println!(
            "iteration {}: {} (apple share {:.2}, catches/episode {:.2}, corner mass {:.2}, edge mass {:.2})",
            it.diagnostics.iteration, e.label, e.apple_share, e.catches_per_episode, e.corner_mass, e.edge_mass
        );
        for y in (0..5).rev() {
            let row: Vec<String> = (0..5).map(|x| format!("{:5}", e.heatmap.counts[x][y])).collect();
            println!("    {}", row.join(""));
        }
        Ok(())
    })?;
    Ok(())
}
