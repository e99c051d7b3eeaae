//! Diversity measures between policies.
//!
//! The trajectory NLL is the novelty signal used during training; the
//! accumulative cross-entropy `D(pi_i, pi_j) = E_{tau ~ pi_i}[NLL(tau; pi_j)]`
//! is its Monte-Carlo average. Population diversity (PD) scores a whole set of
//! policies by the determinant of a pairwise similarity kernel.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{collect_batch, derive_seed, EnvFactory, Observation, Policy, Trajectory, LOG_PROB_FLOOR};

/// Trajectory negative log-likelihood under a reference policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nll {
    pub value: f64,
    /// Steps whose log-probability was raised to the floor.
    pub floored_steps: usize,
}

pub fn trajectory_nll(traj: &Trajectory, reference: &dyn Policy) -> Result<Nll> {
    let mut value = 0.0;
    let mut floored_steps = 0;
    for step in &traj.steps {
        let lp = reference.log_prob(&step.observation, step.action)?;
        if lp.is_nan() {
            return Err(Error::Numeric {
                step: 0,
                what: "reference log-probability".into(),
            });
        }
        if lp < LOG_PROB_FLOOR {
            floored_steps += 1;
        }
        value -= lp.max(LOG_PROB_FLOOR);
    }
    Ok(Nll { value, floored_steps })
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 && xs.iter().any(|x| *x != xs[0]) {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

fn sample_nlls(sampler: &dyn Policy, scorers: &[&dyn Policy], factory: &dyn EnvFactory, n_traj: usize, horizon: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    let batch = collect_batch(sampler, factory, n_traj, horizon, seed)?;
    batch
        .trajectories
        .par_iter()
        .map(|t| scorers.iter().map(|p| trajectory_nll(t, *p).map(|n| n.value)).collect())
        .collect()
}

/// `D(pi_i, pi_j)`: mean NLL under `pi_j` of trajectories sampled from `pi_i`.
/// In multi-agent environments every agent's trajectory counts as one sample.
pub fn cross_entropy_distance(pi_i: &dyn Policy, pi_j: &dyn Policy, factory: &dyn EnvFactory, n_traj: usize, horizon: usize, seed: u64) -> Result<Estimate> {
    let nll: Vec<f64> = sample_nlls(pi_i, &[pi_j], factory, n_traj, horizon, seed)?.into_iter().map(|v| v[0]).collect();
    Ok(Estimate::from_samples(&nll))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlDecomposition {
    pub kl: f64,
    pub cross_entropy: f64,
    pub entropy: f64,
}

/// Trajectory KL, cross-entropy and entropy estimated on one shared sample from `pi_i`.
pub fn kl_decomposition(pi_i: &dyn Policy, pi_j: &dyn Policy, factory: &dyn EnvFactory, n_traj: usize, horizon: usize, seed: u64) -> Result<KlDecomposition> {
    let rows = sample_nlls(pi_i, &[pi_j, pi_i], factory, n_traj, horizon, seed)?;
    let n = rows.len() as f64;
    let cross_entropy = rows.iter().map(|r| r[0]).sum::<f64>() / n;
    let entropy = rows.iter().map(|r| r[1]).sum::<f64>() / n;
    Ok(KlDecomposition {
        kl: cross_entropy - entropy,
        cross_entropy,
        entropy,
    })
}

/// One row of a pairwise distance table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub i: usize,
    pub j: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
}

pub const DISTANCE_CSV_HEADER: &str = "i,j,estimate,stderr,n";

impl DistanceRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.i, self.j, self.estimate, self.stderr, self.n)
    }
}

/// `D(pi_i, pi_j)` for every ordered pair `i != j`.
pub fn pairwise_cross_entropy(policies: &[&dyn Policy], factory: &dyn EnvFactory, n_traj: usize, horizon: usize, seed: u64) -> Result<Vec<DistanceRow>> {
    let mut rows = Vec::new();
    for (i, pi) in policies.iter().enumerate() {
        for (j, pj) in policies.iter().enumerate() {
            if i == j {
                continue;
            }
            let e = cross_entropy_distance(*pi, *pj, factory, n_traj, horizon, derive_seed(&[seed, i as u64]))?;
            rows.push(DistanceRow {
                i,
                j,
                estimate: e.mean,
                stderr: e.stderr,
                n: e.n,
            });
        }
    }
    Ok(rows)
}

/// Jensen-Shannon divergence (nats) between two categorical distributions given as log-probabilities.
pub fn jsd_categorical(lp: &[f64], lq: &[f64]) -> f64 {
    let mut js = 0.0;
    for (&a, &b) in lp.iter().zip(lq) {
        let (p, q) = (a.exp(), b.exp());
        let m = 0.5 * (p + q);
        if m <= 0.0 {
            continue;
        }
        let lm = m.ln();
        if p > 0.0 {
            js += 0.5 * p * (a - lm);
        }
        if q > 0.0 {
            js += 0.5 * q * (b - lm);
        }
    }
    js.max(0.0)
}

/// Mean over `states` of the per-state action-distribution JSD.
pub fn jsd_estimate(pi_i: &dyn Policy, pi_j: &dyn Policy, states: &[Observation]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Config("jsd_estimate needs at least one state".into()));
    }
    let per_state = states
        .par_iter()
        .map(|s| Ok(jsd_categorical(&pi_i.log_probs(s)?, &pi_j.log_probs(s)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_state.iter().sum::<f64>() / states.len() as f64)
}

/// Symmetric similarity matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub m: usize,
    pub entries: Vec<f64>,
}

impl KernelMatrix {
    /// Builds the matrix from an upper-triangle similarity function.
    pub fn from_pairs(m: usize, mut k: impl FnMut(usize, usize) -> Result<f64>) -> Result<Self> {
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
            for j in i + 1..m {
                let v = k(i, j)?;
                entries[i * m + j] = v;
                entries[j * m + i] = v;
            }
        }
        Ok(Self { m, entries })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    /// Determinant, with tiny negative values from round-off clamped to zero.
    pub fn determinant(&self) -> f64 {
        let det = DMatrix::from_row_slice(self.m, self.m, &self.entries).determinant();
        if det < 0.0 {
            if det < -1e-9 {
                log::warn!("kernel determinant {det:e} is negative beyond round-off; clamping to 0");
            }
            return 0.0;
        }
        det
    }
}

fn require_population(m: usize, scale: f64) -> Result<()> {
    if m < 2 {
        return Err(Error::Config(format!("population diversity needs at least 2 policies, got {m}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("kernel length scale must be positive, got {scale}")));
    }
    Ok(())
}

/// `exp(-divergence / (2 p^2))`.
pub fn divergence_kernel(divergence: f64, p: f64) -> f64 {
    (-divergence / (2.0 * p * p)).exp()
}

pub fn jsd_kernel_matrix(policies: &[&dyn Policy], states: &[Observation], p: f64) -> Result<KernelMatrix> {
    require_population(policies.len(), p)?;
    KernelMatrix::from_pairs(policies.len(), |i, j| Ok(divergence_kernel(jsd_estimate(policies[i], policies[j], states)?, p)))
}

/// `det(K_JSD)` for a population of categorical policies.
pub fn population_diversity_jsd(policies: &[&dyn Policy], states: &[Observation], p: f64) -> Result<f64> {
    Ok(jsd_kernel_matrix(policies, states, p)?.determinant())
}

/// Squared-exponential kernel over behaviour embeddings (one row of actions
/// per policy, one column per state).
pub fn se_kernel_matrix(embeddings: &[Vec<f64>], l: f64) -> Result<KernelMatrix> {
    require_population(embeddings.len(), l)?;
    let n = embeddings[0].len();
    if n == 0 || embeddings.iter().any(|e| e.len() != n) {
        return Err(Error::Config("behaviour embeddings must be non-empty and equally long".into()));
    }
    KernelMatrix::from_pairs(embeddings.len(), |i, j| {
        let d2: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((-d2 / (2.0 * l * l * n as f64)).exp())
    })
}

/// `det(K_SE)` of deterministic 1-D policies evaluated on shared states.
pub fn population_diversity_dvd(policies: &[&dyn Fn(f64) -> f64], states: &[f64], l: f64) -> Result<f64> {
    let embeddings: Vec<Vec<f64>> = policies.iter().map(|mu| states.iter().map(|s| mu(*s)).collect()).collect();
    Ok(se_kernel_matrix(&embeddings, l)?.determinant())
}

/// Monte-Carlo estimate of `KL(i||j) + KL(j||i)` between the Gaussian
/// randomizations `N(mu_i(s), sigma^2)` and `N(mu_j(s), sigma^2)`, averaged
/// over `states` with one sampled action per state and direction.
pub fn gaussian_symmetric_kl(mu_i: &dyn Fn(f64) -> f64, mu_j: &dyn Fn(f64) -> f64, sigma: f64, states: &[f64], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma is positive");
    let log_density = |a: f64, mu: f64| -0.5 * ((a - mu) / sigma).powi(2);
    let mut total = 0.0;
    for &s in states {
        let (mi, mj) = (mu_i(s), mu_j(s));
        let a = mi + noise.sample(&mut rng);
        let b = mj + noise.sample(&mut rng);
        total += log_density(a, mi) - log_density(a, mj);
        total += log_density(b, mj) - log_density(b, mi);
    }
    total / states.len() as f64
}

/// States visited by Gaussian-randomized 1-D policies in the system
/// `s' = clamp(s + 0.1 a, -1, 1)`, starting uniformly in `[-1, 1]`. Each policy
/// contributes an equal share of the `n` states.
pub fn gaussian_rollout_states(policies: &[&dyn Fn(f64) -> f64], sigma: f64, n: usize, horizon: usize, seed: u64) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).expect("sigma is positive");
    let mut states = Vec::with_capacity(n);
    for (k, mu) in policies.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, k as u64]));
        let quota = n * (k + 1) / policies.len() - n * k / policies.len();
        let mut s = 0.0;
        for t in 0..quota {
            if t % horizon == 0 {
                s = rng.random_range(-1.0..=1.0);
            }
            states.push(s);
            let a = mu(s) + noise.sample(&mut rng);
            s = (s + 0.1 * a).clamp(-1.0, 1.0);
        }
    }
    states
}

/// PD of Gaussian-randomized 1-D policies through the divergence kernel, with
/// the kernel width chosen as `l / sigma`.
pub fn population_diversity_gaussian(policies: &[&dyn Fn(f64) -> f64], sigma: f64, states: &[f64], l: f64, seed: u64) -> Result<f64> {
    require_population(policies.len(), l)?;
    let p = l / sigma;
    let k = KernelMatrix::from_pairs(policies.len(), |i, j| {
        let d = gaussian_symmetric_kl(policies[i], policies[j], sigma, states, derive_seed(&[seed, i as u64, j as u64]));
        Ok(divergence_kernel(d, p))
    })?;
    Ok(k.determinant())
}

/// Up to `n` states from the union of every policy's own rollouts, subsampled
/// without replacement when more are available.
pub fn sample_states(policies: &[&dyn Policy], factory: &dyn EnvFactory, episodes_per_policy: usize, horizon: usize, n: usize, seed: u64) -> Result<Vec<Observation>> {
    let mut all = Vec::new();
    for (k, p) in policies.iter().enumerate() {
        let batch = collect_batch(*p, factory, episodes_per_policy, horizon, derive_seed(&[seed, k as u64]))?;
        for t in batch.trajectories {
            all.extend(t.steps.into_iter().map(|s| s.observation));
        }
    }
    if all.len() <= n {
        return Ok(all);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, u64::MAX]));
    let mut picked = index::sample(&mut rng, all.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| std::mem::take(&mut all[i])).collect())
}
