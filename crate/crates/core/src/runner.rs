//! Run configs, checkpoints and the command implementations behind the `rspo` binary.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/config.resolved.json   every setting, defaults filled in
//! <out>/report.json            per-seed mode labels and distinct-mode counts
//! <out>/seed_<s>/iter_<k>/policy.bin, policy.json
//! <out>/seed_<s>/iter_<k>/value.bin, value.json
//! <out>/seed_<s>/iter_<k>/predictor.bin, predictor.json   (reward-prediction runs only)
//! <out>/seed_<s>/iter_<k>/meta.json
//! <out>/seed_<s>/report.json, modes.csv, diversity.csv, heatmap_<k>.csv
//! ```
//!
//! A `.bin` file holds `len` little-endian IEEE-754 `f64` values in the
//! network's parameter order (first-layer weights, first-layer biases, output
//! weights, output biases). Its `.json` sidecar records `len` and the layer
//! sizes, and loading refuses any file whose size or shape disagrees.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{classify_bandit, classify_escalation, classify_four_goals, classify_monster_hunt, distinct_mode_count, return_stats, Heatmap, ModeLabel, MonsterHuntThresholds, ReturnStats};
use crate::diversity::{pairwise_cross_entropy, population_diversity_jsd, sample_states, DistanceRow, DISTANCE_CSV_HEADER};
use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::mdp::{collect_episodes, derive_seed, Policy};
use crate::neural::{CategoricalPolicy, Mlp, MlpSpec};
use crate::oracle::{run_instance, TheoremInstance, TheoremReport};
use crate::ppo::{PpoConfig, RunningMeanStd, TrainingSchedule};
use crate::rspo::{params_hash, rspo_run, IterationDiagnostics, IterationOutcome, ReferenceArchive, ReferencePolicy, RewardPredictor, RspoConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Evaluation settings used after training and by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_eval: usize,
    pub seed: u64,
    /// Episodes per ordered pair for the cross-entropy matrix.
    pub ce_episodes: usize,
    /// States used for the population-diversity score.
    pub pd_states: usize,
    /// Divergence-kernel width.
    pub pd_p: f64,
    pub monster_hunt: MonsterHuntThresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_eval: 64,
            seed: 7,
            ce_episodes: 128,
            pd_states: 1000,
            pd_p: 1.0,
            monster_hunt: MonsterHuntThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub rspo: RspoConfig,
    #[serde(default)]
    pub schedule: TrainingSchedule,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

pub fn ppo_defaults(kind: EnvKind) -> PpoConfig {
    match kind {
        EnvKind::FourGoals | EnvKind::Bandit => PpoConfig::four_goals(),
        EnvKind::MonsterHunt => PpoConfig::monster_hunt(),
        EnvKind::Escalation => PpoConfig::escalation(),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    /// Parses a config, filling the `ppo` and `rspo` blocks from the
    /// environment's defaults before applying the given overrides.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut v: Value = serde_json::from_str(text)?;
        let obj = v.as_object_mut().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let env = obj.get("env").ok_or_else(|| Error::Config("missing field `env`".into()))?;
        let env: EnvConfig = serde_json::from_value(env.clone()).map_err(|e| Error::Config(format!("env: {e}")))?;
        let kind = env.kind();
        for (key, mut base) in [("ppo", serde_json::to_value(ppo_defaults(kind))?), ("rspo", serde_json::to_value(RspoConfig::for_env(kind))?)] {
            if let Some(user) = obj.remove(key) {
                if !user.is_object() {
                    return Err(Error::Config(format!("`{key}` must be an object")));
                }
                merge(&mut base, user);
            }
            obj.insert(key.into(), base);
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.env.validate()?;
        self.ppo.validate()?;
        self.rspo.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.schedule.env_steps == 0 {
            return Err(Error::Config("schedule.env_steps must be positive".into()));
        }
        if self.eval.ce_episodes == 0 || self.eval.pd_states == 0 || !(self.eval.pd_p > 0.0) {
            return Err(Error::Config("eval.ce_episodes, eval.pd_states and eval.pd_p must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::Checkpoint {
        path: path.into(),
        detail: e.to_string(),
    })
}

/// Shape header stored next to every `.bin` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub kind: String,
    pub dtype: String,
    pub byte_order: String,
    pub len: usize,
    pub spec: MlpSpec,
    /// Action count for reward predictors, whose input is `obs ++ one_hot(action)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_actions: Option<usize>,
}

pub fn write_checkpoint(bin: &Path, kind: &str, net: &Mlp, n_actions: Option<usize>) -> Result<()> {
    let bytes: Vec<u8> = net.params.iter().flat_map(|x| x.to_le_bytes()).collect();
    write(bin, bytes)?;
    let sidecar = Sidecar {
        kind: kind.into(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        len: net.params.len(),
        spec: net.spec,
        n_actions,
    };
    write(&bin.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)
}

pub fn read_checkpoint(bin: &Path, kind: &str) -> Result<(Mlp, Sidecar)> {
    let corrupt = |detail: String| Error::Checkpoint { path: bin.into(), detail };
    let sidecar: Sidecar = read_json(&bin.with_extension("json"))?;
    if sidecar.kind != kind || sidecar.dtype != "f64" || sidecar.byte_order != "little" {
        return Err(corrupt(format!("sidecar describes a {} {}/{} array, expected a little-endian f64 {kind}", sidecar.kind, sidecar.dtype, sidecar.byte_order)));
    }
    let bytes = read(bin)?;
    if bytes.len() != 8 * sidecar.len {
        return Err(corrupt(format!("{} bytes on disk, sidecar promises {} values", bytes.len(), sidecar.len)));
    }
    let spec = MlpSpec::new(sidecar.spec.input_dim, sidecar.spec.hidden_dim, sidecar.spec.output_dim).map_err(|e| corrupt(e.to_string()))?;
    let params: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let net = Mlp::from_params(spec, params).map_err(|e| corrupt(e.to_string()))?;
    Ok((net, sidecar))
}

/// `iter_<k>/meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMeta {
    pub iteration: usize,
    pub param_hash: u64,
    pub value_normalizer: RunningMeanStd,
    pub diagnostics: IterationDiagnostics,
}

pub fn iteration_dir(seed_dir: &Path, k: usize) -> PathBuf {
    seed_dir.join(format!("iter_{k}"))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn write_iteration(seed_dir: &Path, out: &IterationOutcome) -> Result<()> {
    let dir = iteration_dir(seed_dir, out.diagnostics.iteration);
    write_checkpoint(&dir.join("policy.bin"), "policy", &out.reference.policy().net, None)?;
    write_checkpoint(&dir.join("value.bin"), "value", &out.learner.value.net, None)?;
    if let Some(p) = out.reference.predictor() {
        write_checkpoint(&dir.join("predictor.bin"), "predictor", &p.net, Some(p.n_actions))?;
    }
    let meta = IterationMeta {
        iteration: out.diagnostics.iteration,
        param_hash: out.reference.param_hash(),
        value_normalizer: out.learner.value_norm.clone(),
        diagnostics: out.diagnostics.clone(),
    };
    write(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)
}

/// Reads `iter_0`, `iter_1`, ... until the first missing directory.
pub fn load_archive(seed_dir: &Path) -> Result<(ReferenceArchive, Vec<IterationMeta>)> {
    let mut archive = ReferenceArchive::new();
    let mut metas = Vec::new();
    for k in 0.. {
        let dir = iteration_dir(seed_dir, k);
        if !dir.is_dir() {
            break;
        }
        let meta: IterationMeta = read_json(&dir.join("meta.json"))?;
        let policy_path = dir.join("policy.bin");
        let (net, _) = read_checkpoint(&policy_path, "policy")?;
        if params_hash(&net.params) != meta.param_hash {
            return Err(Error::Checkpoint {
                path: policy_path,
                detail: "parameter hash differs from meta.json".into(),
            });
        }
        let predictor_path = dir.join("predictor.bin");
        let predictor = if predictor_path.exists() {
            let (net, side) = read_checkpoint(&predictor_path, "predictor")?;
            let n_actions = side.n_actions.ok_or_else(|| Error::Checkpoint {
                path: predictor_path.clone(),
                detail: "predictor sidecar lacks n_actions".into(),
            })?;
            let obs_dim = net.spec.input_dim.saturating_sub(n_actions);
            Some(RewardPredictor::from_net(net, obs_dim, n_actions)?)
        } else {
            None
        };
        archive.push(ReferencePolicy::new(k, CategoricalPolicy { net }, meta.diagnostics.delta, predictor)?);
        metas.push(meta);
    }
    if archive.is_empty() {
        return Err(Error::Usage(format!("{} holds no iter_0 checkpoint", seed_dir.display())));
    }
    Ok((archive, metas))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub iteration: usize,
    pub label: String,
    pub mode: ModeLabel,
    pub returns: ReturnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdScore {
    pub value: f64,
    pub p: f64,
    pub n_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub iterations: usize,
    pub modes: Vec<ModeRow>,
    pub distinct_modes: usize,
    /// Distinct modes among iterations `0..=k`.
    pub distinct_modes_by_iteration: Vec<usize>,
    pub deltas: Vec<f64>,
    /// Mean acceptance over each iteration's last 10 updates.
    pub final_acceptance: Vec<f64>,
    pub failed_iterations: Vec<usize>,
    pub cross_entropy: Vec<DistanceRow>,
    pub population_diversity: Option<PdScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seeds: Vec<SeedReport>,
    pub mean_distinct_modes: f64,
}

struct Evaluation {
    report: SeedReport,
    heatmaps: Vec<Option<Heatmap>>,
}

fn classify(env: &EnvConfig, policy: &dyn Policy, eval: &EvalConfig, seed: u64) -> Result<(ModeLabel, ReturnStats, Option<Heatmap>)> {
    Ok(match env {
        EnvConfig::FourGoals(c) => {
            let e = classify_four_goals(policy, c, eval.n_eval, seed)?;
            (e.label, e.returns, None)
        }
        EnvConfig::MonsterHunt(c) => {
            let e = classify_monster_hunt(policy, c, &eval.monster_hunt, eval.n_eval, seed)?;
            (e.label, e.returns, Some(e.heatmap))
        }
        EnvConfig::Escalation(c) => {
            let e = classify_escalation(policy, c, eval.n_eval, seed)?;
            (e.label, e.returns, None)
        }
        EnvConfig::Bandit { .. } => {
            let episodes = collect_episodes(policy, env, eval.n_eval, 1, seed)?;
            (classify_bandit(policy)?, return_stats(&episodes), None)
        }
    })
}

fn evaluate(cfg: &RunConfig, seed: u64, archive: &ReferenceArchive, metas: &[IterationMeta]) -> Result<Evaluation> {
    let eval = &cfg.eval;
    let mut modes = Vec::with_capacity(archive.len());
    let mut heatmaps = Vec::with_capacity(archive.len());
    let mut distinct_by_iter = Vec::with_capacity(archive.len());
    for (k, r) in archive.iter().enumerate() {
        let (mode, returns, heatmap) = classify(&cfg.env, r.policy(), eval, derive_seed(&[eval.seed, seed, k as u64]))?;
        modes.push(ModeRow {
            iteration: k,
            label: mode.to_string(),
            mode,
            returns,
        });
        heatmaps.push(heatmap);
        distinct_by_iter.push(distinct_mode_count(&modes.iter().map(|m| m.mode).collect::<Vec<_>>()));
    }
    let policies: Vec<&dyn Policy> = archive.iter().map(|r| r.policy() as &dyn Policy).collect();
    let probe = cfg.env.build();
    let horizon = probe.horizon();
    let (cross_entropy, population_diversity) = if policies.len() >= 2 {
        let ce = pairwise_cross_entropy(&policies, &cfg.env, eval.ce_episodes, horizon, derive_seed(&[eval.seed, seed, 0xCE]))?;
        let per_episode = horizon * probe.n_agents();
        let episodes = eval.pd_states.div_ceil(per_episode * policies.len()).max(1);
        let states = sample_states(&policies, &cfg.env, episodes, horizon, eval.pd_states, derive_seed(&[eval.seed, seed, 0xDD]))?;
        let pd = population_diversity_jsd(&policies, &states, eval.pd_p)?;
        (
            ce,
            Some(PdScore {
                value: pd,
                p: eval.pd_p,
                n_states: states.len(),
            }),
        )
    } else {
        (Vec::new(), None)
    };
    let report = SeedReport {
        seed,
        iterations: archive.len(),
        distinct_modes: distinct_by_iter.last().copied().unwrap_or(0),
        distinct_modes_by_iteration: distinct_by_iter,
        modes,
        deltas: metas.iter().map(|m| m.diagnostics.delta).collect(),
        final_acceptance: metas.iter().map(|m| m.diagnostics.final_acceptance(10)).collect(),
        failed_iterations: metas.iter().filter(|m| m.diagnostics.failed()).map(|m| m.iteration).collect(),
        cross_entropy,
        population_diversity,
    };
    Ok(Evaluation { report, heatmaps })
}

fn write_evaluation(seed_dir: &Path, ev: &Evaluation) -> Result<()> {
    let mut modes = String::from("iteration,label,return_mean,return_std\n");
    for m in &ev.report.modes {
        modes.push_str(&format!("{},{},{},{}\n", m.iteration, m.label, m.returns.mean, m.returns.std));
    }
    write(&seed_dir.join("modes.csv"), modes)?;
    let mut div = format!("{DISTANCE_CSV_HEADER}\n");
    for row in &ev.report.cross_entropy {
        div.push_str(&row.csv());
        div.push('\n');
    }
    write(&seed_dir.join("diversity.csv"), div)?;
    for (k, h) in ev.heatmaps.iter().enumerate() {
        if let Some(h) = h {
            write(&seed_dir.join(format!("heatmap_{k}.csv")), h.csv())?;
        }
    }
    write(&seed_dir.join("report.json"), serde_json::to_string_pretty(&ev.report)?)
}

fn summarize(out: &Path, seeds: Vec<SeedReport>) -> Result<RunReport> {
    let mean = seeds.iter().map(|s| s.distinct_modes as f64).sum::<f64>() / seeds.len().max(1) as f64;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        seeds,
        mean_distinct_modes: mean,
    };
    write(&out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Trains every seed, persisting each iteration as it finishes, then evaluates.
/// A failure leaves the completed iterations on disk.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    write(&out.join("config.resolved.json"), cfg.to_json()?)?;
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed);
        log::info!("seed {seed}: training {} iterations into {}", cfg.rspo.iterations, dir.display());
        let run = rspo_run(&cfg.env, &cfg.ppo, &cfg.rspo, &cfg.schedule, seed, |it, _| write_iteration(&dir, it))?;
        let (archive, metas) = load_archive(&dir)?;
        debug_assert_eq!(archive.len(), run.archive.len());
        let ev = evaluate(cfg, seed, &archive, &metas)?;
        write_evaluation(&dir, &ev)?;
        reports.push(ev.report);
    }
    summarize(out, reports)
}

/// Re-evaluates a finished (or partial) run from its checkpoints.
pub fn cmd_eval(run_dir: &Path, n_eval: Option<usize>) -> Result<RunReport> {
    let mut cfg = RunConfig::load(&run_dir.join("config.resolved.json"))?;
    if let Some(n) = n_eval {
        cfg.eval.n_eval = n;
    }
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(run_dir, seed);
        if !dir.is_dir() {
            log::warn!("{} missing, skipping seed {seed}", dir.display());
            continue;
        }
        let (archive, metas) = load_archive(&dir)?;
        let ev = evaluate(&cfg, seed, &archive, &metas)?;
        write_evaluation(&dir, &ev)?;
        reports.push(ev.report);
    }
    if reports.is_empty() {
        return Err(Error::Usage(format!("{} contains no trained seed", run_dir.display())));
    }
    summarize(run_dir, reports)
}

pub fn load_instance(path: &Path) -> Result<TheoremInstance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let inst: TheoremInstance = serde_json::from_str(&text)?;
    inst.validate()?;
    Ok(inst)
}

pub fn cmd_oracle(instance_path: &Path) -> Result<Vec<TheoremReport>> {
    run_instance(&load_instance(instance_path)?)
}

pub const METRICS_CSV_HEADER: &str = "seed,iteration,delta,updates,final_acceptance,final_return,failed";

/// Training-curve summary per iteration, written to `<run>/metrics.csv`.
pub fn cmd_metrics(run_dir: &Path) -> Result<String> {
    let cfg = RunConfig::load(&run_dir.join("config.resolved.json"))?;
    let mut csv = format!("{METRICS_CSV_HEADER}\n");
    for &seed in &cfg.seeds {
        let dir = seed_dir(run_dir, seed);
        for k in 0.. {
            let path = iteration_dir(&dir, k).join("meta.json");
            if !path.exists() {
                break;
            }
            let meta: IterationMeta = read_json(&path)?;
            let d = &meta.diagnostics;
            let final_return = d.history.last().map_or(f64::NAN, |h| h.mean_return);
            csv.push_str(&format!("{seed},{k},{},{},{},{},{}\n", d.delta, d.history.len(), d.final_acceptance(10), final_return, d.failed()));
        }
    }
    write(&run_dir.join("metrics.csv"), &csv)?;
    Ok(csv)
}
