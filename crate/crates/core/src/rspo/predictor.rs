//! Reward predictors fitted to a reference policy's own experience.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{collect_batch, derive_seed, EnvFactory, Policy};
use crate::neural::{adam_step, AdamState, Mlp, MlpSpec};

/// `f(s, a)`: an MLP over the observation concatenated with a one-hot action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardPredictor {
    pub net: Mlp,
    pub obs_dim: usize,
    pub n_actions: usize,
}

impl RewardPredictor {
    pub fn zeros(obs_dim: usize, n_actions: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            net: Mlp::zeros(MlpSpec::new(obs_dim + n_actions, hidden, 1)?),
            obs_dim,
            n_actions,
        })
    }

    pub fn from_net(net: Mlp, obs_dim: usize, n_actions: usize) -> Result<Self> {
        if net.spec.input_dim != obs_dim + n_actions || net.spec.output_dim != 1 {
            return Err(Error::Shape {
                expected: obs_dim + n_actions,
                got: net.spec.input_dim,
                context: "reward predictor input",
            });
        }
        Ok(Self { net, obs_dim, n_actions })
    }

    pub fn input(&self, obs: &[f64], action: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.obs_dim + self.n_actions);
        x.extend_from_slice(obs);
        x.extend((0..self.n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
        x
    }

    pub fn predict(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(self.net.forward(&self.input(obs, action))?[0])
    }
}

/// `|f(s, a) - r|^2`.
pub fn reward_intrinsic(obs: &[f64], action: usize, reward: f64, predictor: &RewardPredictor) -> Result<f64> {
    Ok((predictor.predict(obs, action)? - reward).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub hidden_size: usize,
    pub episodes: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            episodes: 128,
            epochs: 30,
            minibatch_size: 1024,
            learning_rate: 3e-3,
        }
    }
}

/// Fits a predictor by MSE regression on `(s, a, r)` triples from the
/// reference's rollouts. Returns the predictor and its final training MSE.
pub fn train_reward_predictor(reference: &dyn Policy, factory: &dyn EnvFactory, horizon: usize, cfg: &PredictorConfig, seed: u64) -> Result<(RewardPredictor, f64)> {
    let (obs_dim, n_actions) = (reference.obs_dim(), reference.n_actions());
    let batch = collect_batch(reference, factory, cfg.episodes.max(1), horizon, derive_seed(&[seed, 0x9E]))?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let template = RewardPredictor::zeros(obs_dim, n_actions, cfg.hidden_size)?;
    for t in &batch.trajectories {
        for s in &t.steps {
            inputs.push(template.input(&s.observation, s.action));
            targets.push(s.reward);
        }
    }
    if targets.iter().all(|r| *r == 0.0) {
        log::warn!("reference never observed a non-zero reward; using the zero reward predictor");
        return Ok((template, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x9F]));
    let net = Mlp::init(template.net.spec, &mut rng);
    let mut predictor = RewardPredictor { net, ..template };
    let mut opt = AdamState::new(predictor.net.params.len(), cfg.learning_rate, 1e-8);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for mb in order.chunks(cfg.minibatch_size.max(1)) {
            let n = mb.len() as f64;
            let (grad, _) = predictor.net.batch_gradient(
                mb.len(),
                |k| inputs[mb[k]].as_slice(),
                |k, out| {
                    let err = out[0] - targets[mb[k]];
                    (vec![2.0 * err / n], err * err / n)
                },
            );
            adam_step(&mut predictor.net.params, &grad, &mut opt)?;
        }
    }
    let mse = mean_squared_error(&predictor, &inputs, &targets)?;
    Ok((predictor, mse))
}

fn mean_squared_error(predictor: &RewardPredictor, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (x, r) in inputs.iter().zip(targets) {
        total += (predictor.net.forward(x)?[0] - r).powi(2);
    }
    Ok(total / inputs.len().max(1) as f64)
}

/// MSE of `predictor` on fresh rollouts of `policy`.
pub fn predictor_mse_on(predictor: &RewardPredictor, policy: &dyn Policy, factory: &dyn EnvFactory, episodes: usize, horizon: usize, seed: u64) -> Result<f64> {
    let batch = collect_batch(policy, factory, episodes, horizon, seed)?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for t in &batch.trajectories {
        for s in &t.steps {
            inputs.push(predictor.input(&s.observation, s.action));
            targets.push(s.reward);
        }
    }
    mean_squared_error(predictor, &inputs, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Bandit;
    use crate::mdp::{Environment, UniformPolicy};

    #[test]
    fn intrinsic_arithmetic() {
        let mut p = RewardPredictor::zeros(1, 2, 4).unwrap();
        assert_eq!(reward_intrinsic(&[0.0], 0, 2.0, &p).unwrap(), 4.0);
        assert_eq!(reward_intrinsic(&[0.0], 1, 0.0, &p).unwrap(), 0.0);
        // Output bias is the last parameter.
        let last = p.net.params.len() - 1;
        p.net.params[last] = 1.5;
        assert_eq!(reward_intrinsic(&[0.3], 1, -2.0, &p).unwrap(), 12.25);
    }

    #[test]
    fn fits_a_constant_reward() {
        let factory = || Box::new(Bandit::new(vec![2.0, 2.0, 2.0])) as Box<dyn Environment>;
        let u = UniformPolicy { obs_dim: 1, n_actions: 3 };
        let cfg = PredictorConfig {
            episodes: 512,
            epochs: 200,
            minibatch_size: 128,
            ..Default::default()
        };
        let (p, train_mse) = train_reward_predictor(&u, &factory, 1, &cfg, 4).unwrap();
        assert!(train_mse < 1e-3, "train mse {train_mse}");
        let held_out = predictor_mse_on(&p, &u, &factory, 200, 1, 77).unwrap();
        assert!(held_out < 1e-3, "held-out mse {held_out}");
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let factory = || Box::new(Bandit::new(vec![1.0, 0.0])) as Box<dyn Environment>;
        let u = UniformPolicy { obs_dim: 1, n_actions: 2 };
        let cfg = PredictorConfig {
            epochs: 0,
            episodes: 16,
            ..Default::default()
        };
        let (a, _) = train_reward_predictor(&u, &factory, 1, &cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[9, 0x9F]));
        let init = Mlp::init(a.net.spec, &mut rng);
        assert_eq!(a.net.params, init.params);
    }

    #[test]
    fn all_zero_rewards_give_zero_predictor() {
        let factory = || Box::new(Bandit::new(vec![0.0, 0.0])) as Box<dyn Environment>;
        let u = UniformPolicy { obs_dim: 1, n_actions: 2 };
        let (p, mse) = train_reward_predictor(&u, &factory, 1, &PredictorConfig::default(), 0).unwrap();
        assert!(p.net.params.iter().all(|w| *w == 0.0));
        assert_eq!(mse, 0.0);
    }
}
