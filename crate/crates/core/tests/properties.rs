use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rspo::diversity::{divergence_kernel, trajectory_nll, KernelMatrix};
use rspo::mdp::{Step, Trajectory, UniformPolicy};
use rspo::neural::{clip_global_norm, global_norm, log_softmax, CategoricalPolicy, Mlp, MlpSpec};
use rspo::oracle::{d_filter, enumerate_trajectories, exact_cross_entropy, random_mdp, random_policy};
use rspo::ppo::gae;
use rspo::rspo::{acceptance, filter_indicator, rspo_reward, IntrinsicMode, NllNormalization, ReferenceArchive, ReferencePolicy, RspoConfig};

fn reference(bias: &[f64], delta: f64, label: usize) -> ReferencePolicy {
    let spec = MlpSpec::new(1, 2, bias.len()).unwrap();
    let mut net = Mlp::zeros(spec);
    let n = net.params.len();
    net.params[n - bias.len()..].copy_from_slice(bias);
    ReferencePolicy::new(label, CategoricalPolicy { net }, delta, None).unwrap()
}

fn trajectory(actions: &[usize], rewards: &[f64]) -> Trajectory {
    Trajectory {
        steps: actions
            .iter()
            .zip(rewards)
            .map(|(a, r)| Step {
                observation: vec![1.0],
                action: *a,
                reward: *r,
                log_prob: 0.0,
            })
            .collect(),
        done: true,
        agent_id: 0,
        final_observation: vec![1.0],
    }
}

fn actions_and_rewards() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| (prop::collection::vec(0usize..3, n), prop::collection::vec(0.0f64..2.0, n)))
}

proptest! {
    #[test]
    fn log_softmax_normalizes(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let total: f64 = log_softmax(&logits).iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_norm(mut g in prop::collection::vec(-10.0f64..10.0, 1..20), max in 0.01f64..5.0) {
        let before = global_norm(&g);
        clip_global_norm(&mut g, max);
        prop_assert!(global_norm(&g) <= max.max(0.0) * (1.0 + 1e-12) || (before <= max && (global_norm(&g) - before).abs() < 1e-12));
    }

    #[test]
    fn gae_with_unit_lambda_is_discounted_return_minus_value(
        rewards in prop::collection::vec(-1.0f64..1.0, 1..10),
        bootstrap in -1.0f64..1.0,
        gamma in 0.5f64..1.0,
    ) {
        let values: Vec<f64> = (0..rewards.len()).map(|t| 0.1 * t as f64).collect();
        let adv = gae(&rewards, &values, bootstrap, gamma, 1.0);
        for t in 0..rewards.len() {
            let mut ret = bootstrap * gamma.powi((rewards.len() - t) as i32);
            for (k, r) in rewards[t..].iter().enumerate() {
                ret += gamma.powi(k as i32) * r;
            }
            prop_assert!((adv[t] - (ret - values[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_nll_is_length_times_log_n((actions, rewards) in actions_and_rewards()) {
        let u = UniformPolicy { obs_dim: 1, n_actions: 3 };
        let nll = trajectory_nll(&trajectory(&actions, &rewards), &u).unwrap();
        // Equal up to the rounding of summing identical terms.
        let expected = actions.len() as f64 * 3f64.ln();
        prop_assert!((nll.value - expected).abs() <= 1e-12 * expected);
        prop_assert_eq!(nll.floored_steps, 0);
    }

    #[test]
    fn acceptance_is_monotone_in_delta(
        (actions, rewards) in actions_and_rewards(),
        bias in prop::collection::vec(-3.0f64..3.0, 3),
        d1 in 0.0f64..20.0,
        d2 in 0.0f64..20.0,
    ) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let t = trajectory(&actions, &rewards);
        for norm in [NllNormalization::Sum, NllNormalization::PerStep] {
            let at_hi = filter_indicator(&t, &reference(&bias, hi, 0), norm).unwrap();
            let at_lo = filter_indicator(&t, &reference(&bias, lo, 0), norm).unwrap();
            prop_assert!(!at_hi || at_lo);
        }
    }

    #[test]
    fn switching_reward_is_exclusive(
        (actions, rewards) in actions_and_rewards(),
        bias in prop::collection::vec(-3.0f64..3.0, 3),
        delta in 0.0f64..10.0,
    ) {
        let t = trajectory(&actions, &rewards);
        let mut archive = ReferenceArchive::new();
        archive.push(reference(&bias, delta, 0));
        let cfg = RspoConfig { intrinsic: IntrinsicMode::Behavior, lambda_b: 0.2, ..RspoConfig::four_goals() };
        let r = rspo_reward(&t, &archive, &cfg, None).unwrap();
        if acceptance(&t, &archive, cfg.nll_normalization).unwrap() {
            prop_assert_eq!(r, rewards);
        } else {
            let lp = log_softmax(&bias);
            for (rt, a) in r.iter().zip(&actions) {
                prop_assert!((rt - 0.2 * -lp[*a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_matrices_are_valid(divs in prop::collection::vec(0.0f64..5.0, 6), p in 0.1f64..3.0) {
        // Four policies, six unordered pairs.
        let mut idx = 0;
        let mut pairs = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in i + 1..4 {
                pairs[i][j] = divs[idx];
                pairs[j][i] = divs[idx];
                idx += 1;
            }
        }
        let k = KernelMatrix::from_pairs(4, |i, j| Ok(divergence_kernel(pairs[i][j], p))).unwrap();
        for i in 0..4 {
            prop_assert_eq!(k.get(i, i), 1.0);
            for j in 0..4 {
                prop_assert_eq!(k.get(i, j), k.get(j, i));
                prop_assert!((0.0..=1.0).contains(&k.get(i, j)));
            }
        }
        let det = k.determinant();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&det));
    }

    #[test]
    fn two_policy_determinant_closed_form(d in 0.0f64..10.0, p in 0.1f64..3.0) {
        let kv = divergence_kernel(d, p);
        let k = KernelMatrix::from_pairs(2, |_, _| Ok(kv)).unwrap();
        prop_assert!((k.determinant() - (1.0 - kv * kv)).abs() < 1e-12);
    }

    #[test]
    fn tabular_invariants(seed in 0u64..1000, n_states in 1usize..4, n_actions in 2usize..4, horizon in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, n_states, n_actions, horizon);
        let a = random_policy(&mut rng, n_states, n_actions);
        let b = random_policy(&mut rng, n_states, n_actions);
        let total: f64 = enumerate_trajectories(&mdp, &a).unwrap().iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(d_filter(&mdp, &a, &b).unwrap() <= exact_cross_entropy(&mdp, &a, &b).unwrap() + 1e-12);
    }
}
