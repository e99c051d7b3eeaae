//! Single-hidden-layer tanh MLP with hand-written backpropagation and Adam.
//!
//! Parameters live in one flat vector laid out as `W1 | b1 | W2 | b2`, with
//! weight matrices stored row-major (one row per output unit). Everything the
//! policy-gradient code needs is here: logits, log-softmax, entropy, exact
//! gradients for arbitrary per-output upstream partials, and the optimizer.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Policy;

/// Samples per parallel work unit when accumulating gradients. Fixed so the
/// floating-point reduction order never depends on the thread count.
const GRAD_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::Config(format!(
                "mlp dimensions must be positive, got {input_dim}x{hidden_dim}x{output_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
        })
    }

    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim + self.output_dim * self.hidden_dim + self.output_dim
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.output_dim * self.hidden_dim;
        (b1, w2, b2)
    }
}

/// Flat parameter vector plus the shape it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        Self {
            spec,
            params: vec![0.0; spec.param_count()],
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        let (b1, w2, b2) = spec.offsets();
        let s1 = 1.0 / (spec.input_dim as f64).sqrt();
        let s2 = 1.0 / (spec.hidden_dim as f64).sqrt();
        for p in &mut net.params[..b1] {
            *p = rng.random_range(-s1..s1);
        }
        for p in &mut net.params[w2..b2] {
            *p = rng.random_range(-s2..s2);
        }
        net
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::Shape {
                expected: spec.param_count(),
                got: params.len(),
                context: "mlp parameter vector",
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric {
                step: i,
                what: "mlp parameter".into(),
            });
        }
        Ok(Self { spec, params })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Shape {
                expected: self.spec.input_dim,
                got: x.len(),
                context: "mlp input",
            });
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let MlpSpec {
            input_dim,
            hidden_dim,
            ..
        } = self.spec;
        let (b1, _, _) = self.spec.offsets();
        let w1 = &self.params[..b1];
        let bias = &self.params[b1..b1 + hidden_dim];
        (0..hidden_dim)
            .map(|h| {
                let row = &w1[h * input_dim..(h + 1) * input_dim];
                let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + bias[h];
                z.tanh()
            })
            .collect()
    }

    fn output(&self, hidden: &[f64]) -> Vec<f64> {
        let MlpSpec {
            hidden_dim,
            output_dim,
            ..
        } = self.spec;
        let (_, w2, b2) = self.spec.offsets();
        let w = &self.params[w2..b2];
        let bias = &self.params[b2..];
        (0..output_dim)
            .map(|o| {
                let row = &w[o * hidden_dim..(o + 1) * hidden_dim];
                row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + bias[o]
            })
            .collect()
    }

    /// Network outputs (logits for a policy head).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let out = self.output(&self.hidden(x));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: 0,
                what: "mlp output".into(),
            });
        }
        Ok(out)
    }

    /// Adds the parameter gradient for one input into `grad`, given the
    /// partial derivatives of the loss with respect to each output.
    pub fn accumulate_gradient(&self, x: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let MlpSpec {
            input_dim,
            hidden_dim,
            output_dim,
        } = self.spec;
        let (b1, w2, b2) = self.spec.offsets();
        let hidden = self.hidden(x);
        let w2m = &self.params[w2..b2];
        for o in 0..output_dim {
            let g = upstream[o];
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[w2 + o * hidden_dim..w2 + (o + 1) * hidden_dim];
            for (r, h) in row.iter_mut().zip(&hidden) {
                *r += g * h;
            }
            grad[b2 + o] += g;
        }
        for h in 0..hidden_dim {
            let mut dh = 0.0;
            for o in 0..output_dim {
                dh += upstream[o] * w2m[o * hidden_dim + h];
            }
            let dz = dh * (1.0 - hidden[h] * hidden[h]);
            if dz == 0.0 {
                continue;
            }
            let row = &mut grad[h * input_dim..(h + 1) * input_dim];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += dz * xi;
            }
            grad[b1 + h] += dz;
        }
    }

    /// Exact gradient of `sum_i <upstream_i, f(x_i)>` with respect to the parameters.
    pub fn backward(&self, batch: &[(&[f64], &[f64])]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        for (x, up) in batch {
            self.check_input(x)?;
            if up.len() != self.spec.output_dim {
                return Err(Error::Shape {
                    expected: self.spec.output_dim,
                    got: up.len(),
                    context: "upstream gradient",
                });
            }
            self.accumulate_gradient(x, up, &mut grad);
        }
        Ok(grad)
    }

    /// Parallel gradient accumulation over `n` samples.
    ///
    /// `sample` maps an index to its input and the upstream partials computed
    /// from the current outputs, plus a scalar loss contribution. Chunks are
    /// reduced in index order, so results are independent of the thread pool.
    pub fn batch_gradient<'a, F>(&self, n: usize, input: impl Fn(usize) -> &'a [f64] + Sync, sample: F) -> (Vec<f64>, f64)
    where
        F: Fn(usize, &[f64]) -> (Vec<f64>, f64) + Sync,
    {
        let chunks: Vec<(Vec<f64>, f64)> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut grad = vec![0.0; self.params.len()];
                let mut loss = 0.0;
                for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
                    let x = input(i);
                    let out = self.output(&self.hidden(x));
                    let (up, l) = sample(i, &out);
                    loss += l;
                    self.accumulate_gradient(x, &up, &mut grad);
                }
                (grad, loss)
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (g, l) in chunks {
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            loss += l;
        }
        (grad, loss)
    }
}

/// `logits[a] - logsumexp(logits)` for every action.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn log_softmax_prob(logits: &[f64], action: usize) -> f64 {
    log_softmax(logits)[action]
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Entropy in nats of a categorical distribution given by log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .map(|lp| lp.exp() * lp)
        .sum::<f64>()
}

pub fn global_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Adam with bias correction; descends along `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            expected: params.len(),
            got: grads.len().min(state.m.len()),
            context: "adam step",
        });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Softmax policy head over a discrete action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub net: Mlp,
}

impl CategoricalPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Mlp::init(MlpSpec::new(obs_dim, hidden, n_actions)?, rng),
        })
    }
}

impl Policy for CategoricalPolicy {
    fn obs_dim(&self) -> usize {
        self.net.spec.input_dim
    }

    fn n_actions(&self) -> usize {
        self.net.spec.output_dim
    }

    fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.net.forward(obs)?))
    }
}

/// Scalar state-value head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub net: Mlp,
}

impl ValueFunction {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Mlp::init(MlpSpec::new(obs_dim, hidden, 1)?, rng),
        })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn finite_difference(net: &Mlp, x: &[f64], up: &[f64], h: f64) -> Vec<f64> {
        let loss = |p: &[f64]| {
            let n = Mlp::from_params(net.spec, p.to_vec()).unwrap();
            n.output(&n.hidden(x)).iter().zip(up).map(|(o, u)| o * u).sum::<f64>()
        };
        let mut p = net.params.clone();
        (0..p.len())
            .map(|i| {
                let orig = p[i];
                p[i] = orig + h;
                let plus = loss(&p);
                p[i] = orig - h;
                let minus = loss(&p);
                p[i] = orig;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let net = Mlp::zeros(MlpSpec::new(3, 4, 5).unwrap());
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn one_unit_net_is_tanh() {
        let net = Mlp::from_params(MlpSpec::new(1, 1, 1).unwrap(), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            assert_eq!(net.forward(&[x]).unwrap()[0], f64::tanh(x));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(MlpSpec::new(6, 64, 5).unwrap(), &mut rng);
        let x = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn wrong_input_length_is_shape_error() {
        let net = Mlp::zeros(MlpSpec::new(3, 4, 5).unwrap());
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn log_softmax_cases() {
        assert!((log_softmax_prob(&[0.0; 5], 2) - (0.2f64).ln()).abs() < 1e-15);
        let lp = log_softmax_prob(&[1000.0, 0.0], 0);
        assert!(lp.is_finite() && lp.abs() < 1e-12);
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let lp = log_softmax(&[-1e4, 1e4, 3.0]);
        assert!(lp.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(MlpSpec::new(4, 8, 3).unwrap(), &mut rng);
        let x = [0.3, 0.1, -0.4, 0.9];
        let g = net.backward(&[(&x, &[0.0, 0.0, 0.0])]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_output_gradient_is_hidden_activation() {
        // d(out)/d(W2) = hidden activation; with W1 = identity-like, hidden = tanh(x).
        let spec = MlpSpec::new(1, 1, 1).unwrap();
        let net = Mlp::from_params(spec, vec![1.0, 0.0, 0.5, 0.0]).unwrap();
        let g = net.backward(&[(&[0.4], &[1.0])]).unwrap();
        assert!((g[2] - f64::tanh(0.4)).abs() < 1e-15);
        assert_eq!(g[3], 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::init(MlpSpec::new(3, 5, 2).unwrap(), &mut rng);
        let x = [0.2, -0.7, 0.4];
        let up = [0.6, -1.3];
        let g = net.backward(&[(&x, &up)]).unwrap();
        let fd = finite_difference(&net, &x, &up, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn batch_gradient_matches_serial_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init(MlpSpec::new(2, 7, 3).unwrap(), &mut rng);
        let xs: Vec<Vec<f64>> = (0..600).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let up = [0.5, -0.25, 1.0];
        let (g, _) = net.batch_gradient(xs.len(), |i| &xs[i], |_, _| (up.to_vec(), 0.0));
        let pairs: Vec<(&[f64], &[f64])> = xs.iter().map(|x| (x.as_slice(), &up[..])).collect();
        let serial = net.backward(&pairs).unwrap();
        for (a, b) in g.iter().zip(&serial) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3, 1e-3, 1e-5);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // After one step m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps).
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        let lr = 0.01;
        let mut s = AdamState::new(3, lr, 1e-5);
        adam_step(&mut p, &g, &mut s).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = -lr * gi / (gi.abs() + 1e-5);
            assert!((pi - expected).abs() < 1e-12, "{pi} vs {expected}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![0.3, 0.2];
            let mut s = AdamState::new(2, 0.1, 1e-5);
            for k in 0..10 {
                adam_step(&mut p, &[k as f64 * 0.1, -0.2], &mut s).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn entropy_bounds() {
        let lp = log_softmax(&[0.0; 5]);
        assert!((entropy(&lp) - (5f64).ln()).abs() < 1e-12);
        let lp = log_softmax(&[50.0, 0.0, 0.0]);
        assert!(entropy(&lp) >= 0.0 && entropy(&lp) < 1e-15);
    }
}
