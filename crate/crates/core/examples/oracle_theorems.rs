//! Exhaustive theorem checks on the bundled tabular instances, plus a
//! Monte-Carlo cross-entropy estimate against its exact value.
//!
//! `cargo run --release --example oracle_theorems`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rspo::diversity::cross_entropy_distance;
use rspo::mdp::Environment;
use rspo::oracle::{exact_cross_entropy, random_mdp, random_policy, run_instance, TabularEnv, TheoremInstance};

const INSTANCES: [&str; 4] = [
    include_str!("../instances/two_optima_h1.json"),
    include_str!("../instances/three_actions_h2.json"),
    include_str!("../instances/branching_chain_h3.json"),
    include_str!("../instances/lambda_violation.json"),
];

fn main() -> rspo::Result<()> {
    for text in INSTANCES {
        let inst: TheoremInstance = serde_json::from_str(text)?;
        for r in run_instance(&inst)? {
            let bound = r.lambda_bound.map_or("-".to_string(), |b| format!("{b:.4}"));
            println!("{:<20} {:<10} {:?}  argmax points {:>3}  lambda bound {bound}", r.instance, r.theorem, r.status, r.argmax_count);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mdp = random_mdp(&mut rng, 3, 2, 4);
    let (a, b) = (random_policy(&mut rng, 3, 2), random_policy(&mut rng, 3, 2));
    let exact = exact_cross_entropy(&mdp, &a, &b)?;
    let env_mdp = mdp.clone();
    let factory = move || Box::new(TabularEnv::new(env_mdp.clone())) as Box<dyn Environment>;
    let est = cross_entropy_distance(&a, &b, &factory, 4000, mdp.horizon, 3)?;
    println!("cross-entropy exact {exact:.4}, Monte-Carlo {:.4} +- {:.4}", est.mean, est.stderr);
    Ok(())
}
