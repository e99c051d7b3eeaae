//! Exhaustive checks on tiny tabular MDPs.
//!
//! Trajectory distributions are enumerated exactly, which gives exact
//! cross-entropies and lets the filtering/switching objectives be maximised by
//! brute force over a simplex grid of stationary policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{env_rng, EnvEvent, Environment, Observation, Policy, StepOutcome, LOG_PROB_FLOOR};

/// Largest number of state/action paths `enumerate_trajectories` will walk.
pub const MAX_PATHS: f64 = 1e5;
/// Largest policy grid the theorem checks will evaluate.
pub const MAX_GRID: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub initial_state: usize,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("tabular mdp: {m}")));
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return bad("n_states, n_actions and horizon must be positive".into());
        }
        if self.horizon > 4 {
            return bad(format!("horizon {} exceeds the supported maximum of 4", self.horizon));
        }
        if self.initial_state >= self.n_states {
            return bad("initial_state out of range".into());
        }
        if self.rewards.len() != self.n_states || self.rewards.iter().any(|r| r.len() != self.n_actions) {
            return bad("rewards must be n_states x n_actions".into());
        }
        if self.transitions.len() != self.n_states {
            return bad("transitions must have one row block per state".into());
        }
        for (s, block) in self.transitions.iter().enumerate() {
            if block.len() != self.n_actions {
                return bad(format!("transitions[{s}] must have one row per action"));
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != self.n_states || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad(format!("transitions[{s}][{a}] is not a distribution over states"));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad(format!("transitions[{s}][{a}] does not sum to 1"));
                }
            }
        }
        Ok(())
    }

    /// Non-negative rewards (fixed horizon holds by construction).
    pub fn check_non_negative_rewards(&self) -> Result<()> {
        if let Some((s, a)) = (0..self.n_states).flat_map(|s| (0..self.n_actions).map(move |a| (s, a))).find(|&(s, a)| self.rewards[s][a] < 0.0) {
            return Err(Error::Assumption {
                assumption: "non-negative reward and fixed horizon",
                detail: format!("r({s}, {a}) = {} < 0", self.rewards[s][a]),
            });
        }
        Ok(())
    }

    fn paths(&self) -> f64 {
        ((self.n_states * self.n_actions) as f64).powi(self.horizon as i32)
    }
}

/// A stationary policy table `probs[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        Self {
            probs: actions
                .iter()
                .map(|&a| (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.len() != mdp.n_states || self.probs.iter().any(|r| r.len() != mdp.n_actions) {
            return Err(Error::Config("tabular policy must be n_states x n_actions".into()));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("tabular policy row {s} is not a distribution")));
            }
        }
        Ok(())
    }

    /// Floored log-probability of `a` in `s`.
    pub fn log_prob_floored(&self, s: usize, a: usize) -> f64 {
        let p = self.probs[s][a];
        if p > 0.0 {
            p.ln().max(LOG_PROB_FLOOR)
        } else {
            LOG_PROB_FLOOR
        }
    }
}

fn one_hot_state(obs: &[f64]) -> usize {
    obs.iter().position(|v| *v > 0.5).unwrap_or(0)
}

/// Observations are one-hot states.
impl Policy for TabularPolicy {
    fn obs_dim(&self) -> usize {
        self.probs.len()
    }
    fn n_actions(&self) -> usize {
        self.probs[0].len()
    }
    fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.probs[one_hot_state(obs)].iter().map(|p| p.ln()).collect())
    }
}

/// The tabular MDP as a sampled environment with one-hot observations.
pub struct TabularEnv {
    mdp: TabularMdp,
    state: usize,
    t: usize,
    rng: ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp) -> Self {
        let state = mdp.initial_state;
        Self {
            mdp,
            state,
            t: 0,
            rng: env_rng(0),
        }
    }

    fn obs(&self) -> Observation {
        (0..self.mdp.n_states).map(|s| if s == self.state { 1.0 } else { 0.0 }).collect()
    }
}

impl Environment for TabularEnv {
    fn n_agents(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        self.mdp.n_states
    }
    fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }
    fn horizon(&self) -> usize {
        self.mdp.horizon
    }
    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = env_rng(seed);
        self.state = self.mdp.initial_state;
        self.t = 0;
        vec![self.obs()]
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.t >= self.mdp.horizon {
            return Err(Error::Usage("step called after the tabular episode finished".into()));
        }
        let (s, a) = (self.state, actions[0]);
        let reward = self.mdp.rewards[s][a];
        let u: f64 = self.rng.random();
        let row = &self.mdp.transitions[s][a];
        let mut acc = 0.0;
        let mut next = row.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for (k, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = k;
                break;
            }
        }
        self.state = next;
        self.t += 1;
        Ok(StepOutcome {
            observations: vec![self.obs()],
            rewards: vec![reward],
            done: self.t >= self.mdp.horizon,
            events: Vec::<EnvEvent>::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularTrajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub total_reward: f64,
}

impl TabularTrajectory {
    pub fn nll(&self, policy: &TabularPolicy) -> f64 {
        -self.states.iter().zip(&self.actions).map(|(s, a)| policy.log_prob_floored(*s, *a)).sum::<f64>()
    }
}

/// Every positive-probability trajectory of `policy`, with its probability.
pub fn enumerate_trajectories(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<(TabularTrajectory, f64)>> {
    if mdp.paths() > MAX_PATHS {
        return Err(Error::SizeGuard(format!("{} state-action paths exceed the limit of {MAX_PATHS}", mdp.paths())));
    }
    let mut out = Vec::new();
    let mut traj = TabularTrajectory {
        states: Vec::with_capacity(mdp.horizon),
        actions: Vec::with_capacity(mdp.horizon),
        total_reward: 0.0,
    };
    walk(mdp, policy, mdp.initial_state, 1.0, &mut traj, &mut out);
    Ok(out)
}

fn walk(mdp: &TabularMdp, policy: &TabularPolicy, s: usize, prob: f64, traj: &mut TabularTrajectory, out: &mut Vec<(TabularTrajectory, f64)>) {
    if traj.states.len() == mdp.horizon {
        out.push((traj.clone(), prob));
        return;
    }
    for a in 0..mdp.n_actions {
        let pa = policy.probs[s][a];
        if pa <= 0.0 {
            continue;
        }
        traj.states.push(s);
        traj.actions.push(a);
        traj.total_reward += mdp.rewards[s][a];
        for (next, pt) in mdp.transitions[s][a].iter().enumerate() {
            if *pt > 0.0 {
                walk(mdp, policy, next, prob * pa * pt, traj, out);
            }
        }
        traj.total_reward -= mdp.rewards[s][a];
        traj.states.pop();
        traj.actions.pop();
    }
}

pub fn expected_return(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    Ok(enumerate_trajectories(mdp, policy)?.iter().map(|(t, p)| p * t.total_reward).sum())
}

/// `sum_tau P_i(tau) NLL(tau; pi_j)`.
pub fn exact_cross_entropy(mdp: &TabularMdp, pi_i: &TabularPolicy, pi_j: &TabularPolicy) -> Result<f64> {
    Ok(enumerate_trajectories(mdp, pi_i)?.iter().map(|(t, p)| p * t.nll(pi_j)).sum())
}

/// Minimum NLL under `pi_j` over trajectories `pi_i` can produce.
pub fn d_filter(mdp: &TabularMdp, pi_i: &TabularPolicy, pi_j: &TabularPolicy) -> Result<f64> {
    Ok(enumerate_trajectories(mdp, pi_i)?.iter().map(|(t, _)| t.nll(pi_j)).fold(f64::INFINITY, f64::min))
}

/// Points of the probability simplex over `n` actions with coordinates in multiples of `resolution`.
pub fn simplex_grid(n: usize, resolution: f64) -> Result<Vec<Vec<f64>>> {
    let steps = (1.0 / resolution).round() as usize;
    if steps == 0 || ((steps as f64) * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid resolution {resolution} must divide 1")));
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<Vec<f64>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.iter().map(|k| *k as f64 / steps as f64).collect());
            return;
        }
        for k in 0..=left {
            cur[i] = k;
            rec(i + 1, left - k, cur, steps, out);
        }
    }
    rec(0, steps, &mut cur, steps, &mut out);
    Ok(out)
}

/// A theorem-check instance as stored in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremInstance {
    pub name: String,
    pub mdp: TabularMdp,
    pub references: Vec<TabularPolicy>,
    pub delta: f64,
    /// Switching-objective weight; the switching check runs only when set.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_resolution")]
    pub grid_resolution: f64,
}

fn default_resolution() -> f64 {
    0.05
}

impl TheoremInstance {
    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        for r in &self.references {
            r.validate(&self.mdp)?;
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config("lambda must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    /// The instance lies outside the theorem's hypotheses (lambda above the bound).
    Flagged,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub policy: TabularPolicy,
    pub objective: f64,
    pub expected_return: f64,
    /// `D_filter(pi, pi_i) - delta` per reference.
    pub constraint_margins: Vec<f64>,
    pub feasible: bool,
    pub optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub instance: String,
    pub theorem: String,
    pub grid_resolution: f64,
    pub grid_size: usize,
    pub delta: f64,
    pub k: usize,
    pub max_return: f64,
    pub max_objective: f64,
    pub argmax_count: usize,
    /// Up to 20 argmax points.
    pub argmax: Vec<GridPoint>,
    pub argmax_in_feasible_optimum: bool,
    pub lambda: Option<f64>,
    /// `Delta / (k delta)` on the grid, for the switching objective.
    pub lambda_bound: Option<f64>,
    pub delta_gap: Option<f64>,
    pub status: Status,
    pub notes: Vec<String>,
}

struct Evaluated {
    policy_index: usize,
    ret: f64,
    filter: f64,
    /// `E[sum_i (1 - phi_i) NLL_i]`.
    rejected_nll: f64,
    margins: Vec<f64>,
    all_positive: bool,
}

const TIE: f64 = 1e-9;

fn policy_grid(mdp: &TabularMdp, resolution: f64) -> Result<(Vec<Vec<f64>>, usize)> {
    let simplex = simplex_grid(mdp.n_actions, resolution)?;
    let size = (simplex.len() as f64).powi(mdp.n_states as i32);
    if size > MAX_GRID as f64 {
        return Err(Error::SizeGuard(format!("policy grid of {size} points exceeds {MAX_GRID}")));
    }
    Ok((simplex, size as usize))
}

fn grid_policy(simplex: &[Vec<f64>], n_states: usize, mut index: usize) -> TabularPolicy {
    let mut probs = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        probs.push(simplex[index % simplex.len()].clone());
        index /= simplex.len();
    }
    TabularPolicy { probs }
}

fn evaluate_grid(inst: &TheoremInstance) -> Result<(Vec<Vec<f64>>, Vec<Evaluated>)> {
    let (simplex, size) = policy_grid(&inst.mdp, inst.grid_resolution)?;
    let evals = (0..size)
        .into_par_iter()
        .map(|i| {
            let pi = grid_policy(&simplex, inst.mdp.n_states, i);
            let trajs = enumerate_trajectories(&inst.mdp, &pi)?;
            let mut ret = 0.0;
            let mut filter = 0.0;
            let mut rejected_nll = 0.0;
            let mut min_nll = vec![f64::INFINITY; inst.references.len()];
            let mut all_positive = true;
            for (t, p) in &trajs {
                ret += p * t.total_reward;
                all_positive &= t.total_reward > 0.0;
                let mut accepted = true;
                for (j, r) in inst.references.iter().enumerate() {
                    let nll = t.nll(r);
                    min_nll[j] = min_nll[j].min(nll);
                    if nll < inst.delta {
                        accepted = false;
                        rejected_nll += p * nll;
                    }
                }
                if accepted {
                    filter += p * t.total_reward;
                }
            }
            Ok(Evaluated {
                policy_index: i,
                ret,
                filter,
                rejected_nll,
                margins: min_nll.iter().map(|m| m - inst.delta).collect(),
                all_positive,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((simplex, evals))
}

/// Checks the assumptions on the grid: non-negative rewards, every reference
/// optimal, a feasible optimum exists, and optimal policies never produce a
/// zero-return trajectory.
fn check_assumptions(inst: &TheoremInstance, evals: &[Evaluated], max_return: f64) -> Result<()> {
    inst.mdp.check_non_negative_rewards()?;
    for (j, r) in inst.references.iter().enumerate() {
        let ret = expected_return(&inst.mdp, r)?;
        if ret < max_return - TIE {
            return Err(Error::Assumption {
                assumption: "multiple distinct global optima",
                detail: format!("reference {j} has return {ret}, below the optimum {max_return}"),
            });
        }
    }
    let optimal = || evals.iter().filter(|e| e.ret >= max_return - TIE);
    if !optimal().any(|e| e.margins.iter().all(|m| *m >= 0.0)) {
        return Err(Error::Assumption {
            assumption: "multiple distinct global optima",
            detail: format!("no optimal grid policy is at least delta = {} from every reference", inst.delta),
        });
    }
    if optimal().any(|e| !e.all_positive) {
        return Err(Error::Assumption {
            assumption: "non-trivial optimum",
            detail: "an optimal policy produces a zero-return trajectory".into(),
        });
    }
    Ok(())
}

fn build_report(inst: &TheoremInstance, simplex: &[Vec<f64>], evals: &[Evaluated], objective: impl Fn(&Evaluated) -> f64, theorem: &str) -> TheoremReport {
    let max_return = evals.iter().map(|e| e.ret).fold(f64::NEG_INFINITY, f64::max);
    let max_objective = evals.iter().map(&objective).fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<&Evaluated> = evals.iter().filter(|e| objective(e) >= max_objective - TIE).collect();
    let point = |e: &Evaluated| {
        let feasible = e.margins.iter().all(|m| *m >= 0.0);
        GridPoint {
            policy: grid_policy(simplex, inst.mdp.n_states, e.policy_index),
            objective: objective(e),
            expected_return: e.ret,
            constraint_margins: e.margins.clone(),
            feasible,
            optimal: e.ret >= max_return - TIE,
        }
    };
    let points: Vec<GridPoint> = argmax.iter().map(|e| point(e)).collect();
    let ok = points.iter().all(|p| p.feasible && p.optimal);
    TheoremReport {
        instance: inst.name.clone(),
        theorem: theorem.into(),
        grid_resolution: inst.grid_resolution,
        grid_size: evals.len(),
        delta: inst.delta,
        k: inst.references.len(),
        max_return,
        max_objective,
        argmax_count: points.len(),
        argmax: points.into_iter().take(20).collect(),
        argmax_in_feasible_optimum: ok,
        lambda: None,
        lambda_bound: None,
        delta_gap: None,
        status: if ok { Status::Pass } else { Status::Fail },
        notes: vec![format!("policies restricted to a stationary simplex grid of resolution {}", inst.grid_resolution)],
    }
}

/// Maximises `E[Phi(tau) R(tau)]` over the grid and checks every maximiser is
/// a feasible global optimum.
pub fn verify_filtering_theorem(inst: &TheoremInstance) -> Result<TheoremReport> {
    inst.validate()?;
    let (simplex, evals) = evaluate_grid(inst)?;
    let max_return = evals.iter().map(|e| e.ret).fold(f64::NEG_INFINITY, f64::max);
    check_assumptions(inst, &evals, max_return)?;
    Ok(build_report(inst, &simplex, &evals, |e| e.filter, "filtering"))
}

/// Same for the switching objective `E[Phi R + lambda sum_i (1 - phi_i) NLL_i]`,
/// and compares `lambda` with the grid value of `Delta / (k delta)`.
pub fn verify_switching_theorem(inst: &TheoremInstance, lambda: f64) -> Result<TheoremReport> {
    inst.validate()?;
    let (simplex, evals) = evaluate_grid(inst)?;
    let max_return = evals.iter().map(|e| e.ret).fold(f64::NEG_INFINITY, f64::max);
    check_assumptions(inst, &evals, max_return)?;
    let mut report = build_report(inst, &simplex, &evals, |e| e.filter + lambda * e.rejected_nll, "switching");
    report.lambda = Some(lambda);
    let k = inst.references.len();
    if k > 0 {
        let infeasible_best = evals
            .iter()
            .filter(|e| e.margins.iter().any(|m| *m < 0.0))
            .map(|e| e.filter)
            .fold(f64::NEG_INFINITY, f64::max);
        if infeasible_best.is_finite() {
            let gap = max_return - infeasible_best;
            let bound = gap / (k as f64 * inst.delta);
            report.delta_gap = Some(gap);
            report.lambda_bound = Some(bound);
            if lambda > bound {
                report.status = Status::Flagged;
                report.notes.push(format!(
                    "lambda = {lambda} exceeds the bound Delta/(k delta) = {bound:.6}; argmax {} the feasible-optimum set",
                    if report.argmax_in_feasible_optimum { "still lies in" } else { "leaves" }
                ));
            }
        }
    }
    Ok(report)
}

/// Filtering report, plus the switching report when the instance sets `lambda`.
pub fn run_instance(inst: &TheoremInstance) -> Result<Vec<TheoremReport>> {
    let mut out = vec![verify_filtering_theorem(inst)?];
    if let Some(l) = inst.lambda {
        out.push(verify_switching_theorem(inst, l)?);
    }
    Ok(out)
}

/// Worst status across reports (Fail > Flagged > Pass).
pub fn overall_status(reports: &[TheoremReport]) -> Status {
    if reports.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else if reports.iter().any(|r| r.status == Status::Flagged) {
        Status::Flagged
    } else {
        Status::Pass
    }
}

/// A random instance with full-support policies, for estimator checks.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, horizon: usize) -> TabularMdp {
    let mut dist = |n: usize| {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let transitions = (0..n_states).map(|_| (0..n_actions).map(|_| dist(n_states)).collect()).collect();
    let rewards = (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    TabularMdp {
        n_states,
        n_actions,
        horizon,
        rewards,
        transitions,
        initial_state: 0,
    }
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularPolicy {
    TabularPolicy {
        probs: (0..n_states)
            .map(|_| {
                let w: Vec<f64> = (0..n_actions).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn bandit_mdp(rewards: Vec<f64>, horizon: usize) -> TabularMdp {
        let n = rewards.len();
        TabularMdp {
            n_states: 1,
            n_actions: n,
            horizon,
            rewards: vec![rewards],
            transitions: vec![vec![vec![1.0]; n]],
            initial_state: 0,
        }
    }

    fn two_optima() -> TheoremInstance {
        TheoremInstance {
            name: "two_optima_h1".into(),
            mdp: bandit_mdp(vec![1.0, 1.0], 1),
            references: vec![TabularPolicy::deterministic(&[0], 2)],
            delta: 0.5,
            lambda: Some(0.05),
            grid_resolution: 0.05,
        }
    }

    #[test]
    fn enumeration_cases() {
        let mdp = bandit_mdp(vec![1.0, 0.0], 2);
        let det = TabularPolicy::deterministic(&[0], 2);
        let t = enumerate_trajectories(&mdp, &det).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].1, 1.0);
        let u = TabularPolicy::uniform(1, 2);
        let t = enumerate_trajectories(&mdp, &u).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|(_, p)| *p == 0.25));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 3, 3, 3);
            let pi = random_policy(&mut rng, 3, 3);
            let total: f64 = enumerate_trajectories(&mdp, &pi).unwrap().iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn size_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mdp = random_mdp(&mut rng, 10, 10, 4);
        mdp.horizon = 4;
        assert!(matches!(enumerate_trajectories(&mdp, &TabularPolicy::uniform(10, 10)), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn exact_cross_entropy_cases() {
        let mdp = bandit_mdp(vec![0.0, 0.0], 3);
        let u = TabularPolicy::uniform(1, 2);
        assert!((exact_cross_entropy(&mdp, &u, &u).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, 2, 3, 3);
            let a = random_policy(&mut rng, 2, 3);
            let b = random_policy(&mut rng, 2, 3);
            assert!(d_filter(&mdp, &a, &b).unwrap() <= exact_cross_entropy(&mdp, &a, &b).unwrap() + 1e-12);
        }
    }

    #[test]
    fn simplex_grid_sizes() {
        assert_eq!(simplex_grid(2, 0.05).unwrap().len(), 21);
        assert_eq!(simplex_grid(3, 0.05).unwrap().len(), 231);
        assert!(simplex_grid(2, 0.3).is_err());
    }

    #[test]
    fn two_optima_filtering_moves_mass_to_the_other_action() {
        let r = verify_filtering_theorem(&two_optima()).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.argmax_count, 1);
        assert_eq!(r.argmax[0].policy.probs[0], vec![0.0, 1.0]);
    }

    #[test]
    fn no_references_gives_unconstrained_optimum() {
        let inst = TheoremInstance {
            references: vec![],
            mdp: bandit_mdp(vec![1.0, 0.5], 1),
            ..two_optima()
        };
        let r = verify_filtering_theorem(&inst).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.argmax[0].policy.probs[0], vec![1.0, 0.0]);
    }

    #[test]
    fn switching_with_zero_lambda_matches_filtering() {
        let f = verify_filtering_theorem(&two_optima()).unwrap();
        let s = verify_switching_theorem(&two_optima(), 0.0).unwrap();
        assert_eq!(f.argmax, s.argmax);
        assert_eq!(s.status, Status::Pass);
        let small = verify_switching_theorem(&two_optima(), 0.05).unwrap();
        assert!((small.lambda_bound.unwrap() - 0.1).abs() < 1e-9);
        assert_eq!(small.argmax[0].policy, f.argmax[0].policy);
    }

    #[test]
    fn large_lambda_is_flagged() {
        let inst = TheoremInstance {
            name: "lambda_violation".into(),
            mdp: bandit_mdp(vec![1.0, 1.0, 1.0], 1),
            references: vec![TabularPolicy { probs: vec![vec![0.5, 0.45, 0.05]] }],
            delta: 0.75,
            lambda: Some(10.0),
            grid_resolution: 0.05,
        };
        let r = verify_switching_theorem(&inst, 10.0).unwrap();
        assert_eq!(r.status, Status::Flagged);
        assert!((r.lambda_bound.unwrap() - 0.05 / 0.75).abs() < 1e-9);
        assert!(!r.argmax_in_feasible_optimum);
    }

    #[test]
    fn assumption_violations_are_refused() {
        let neg = TheoremInstance {
            mdp: bandit_mdp(vec![1.0, -1.0], 1),
            ..two_optima()
        };
        assert!(matches!(verify_filtering_theorem(&neg), Err(Error::Assumption { .. })));
        let single = TheoremInstance {
            mdp: bandit_mdp(vec![1.0, 0.5], 1),
            ..two_optima()
        };
        assert!(matches!(verify_filtering_theorem(&single), Err(Error::Assumption { .. })));
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = two_optima();
        let s = serde_json::to_string(&inst).unwrap();
        let back: TheoremInstance = serde_json::from_str(&s).unwrap();
        assert_eq!(inst, back);
        assert!(serde_json::from_str::<TheoremInstance>("{\"name\": 1}").is_err());
    }
}
