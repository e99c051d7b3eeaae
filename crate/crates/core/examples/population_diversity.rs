//! Population diversity two ways on Gaussian-randomized 1-D policies: the
//! divergence kernel with width `l / sigma`, and the squared-exponential kernel
//! over action embeddings.
//!
//! `cargo run --release --example population_diversity`

use rspo::diversity::{gaussian_rollout_states, jsd_categorical, population_diversity_dvd, population_diversity_gaussian};

fn main() -> rspo::Result<()> {
    let (sigma, l, n) = (0.5, 1.0, 10_000);
    let a = |s: f64| 0.5 * s;
    let b = |s: f64| -0.3 * s + 0.2;
    let c = |s: f64| (3.0 * s).sin();
    let population: [&dyn Fn(f64) -> f64; 3] = [&a, &b, &c];
    for m in 2..=3 {
        let pols = &population[..m];
        let states = gaussian_rollout_states(pols, sigma, n, 20, 1);
        let jsd = population_diversity_gaussian(pols, sigma, &states, l, 2)?;
        let dvd = population_diversity_dvd(pols, &states, l)?;
        println!("{m} policies: PD divergence kernel {jsd:.4}, PD squared-exponential {dvd:.4}");
    }
    let p = [1.0f64, 0.0].map(f64::ln);
    let q = [0.5f64, 0.5].map(f64::ln);
    println!("JSD((1,0), (0.5,0.5)) = {:.4} nats", jsd_categorical(&p, &q));
    Ok(())
}
