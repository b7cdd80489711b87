//! Reproducible experiment runner: scenario resolution, one-variable sweeps,
//! repetitions, per-run CSVs, an aggregate CSV and a manifest.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! runs/p{point}_r{rep}.csv       per-run rows (track specific)
//! runs/p{point}_r{rep}.policy.json  trained policies (train track)
//! aggregate.csv                  mean/std of every run summary metric per sweep point
//! manifest.json                  resolved spec, seeds, scenario digests, run status
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{BaselineKind, BaselinePolicy, JointPolicy};
use crate::comms::{OffloadAction, OffloadMode};
use crate::consensus::{
    bandwidth_cost, dpos_latency, por_latency, run_por_round, select_miners, synthetic_block,
    Chain, Scheme,
};
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::game::{GameConfig, GameInstance};
use crate::madrl::{Mode, PolicySet, TrainConfig, Trainer};
use crate::model::{generate_scenario, load_scenario, GeneratorParams, Range, Scenario};

/// Episodes at the end of training averaged into the run summary.
pub const FINAL_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSource {
    File { path: PathBuf },
    Generator { params: GeneratorParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Track {
    Train,
    SolveGame,
    ConsensusBench,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    NDevices,
    TaskBytes,
    BlockBytes,
    NMiners,
}

impl SweepVariable {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVariable::NDevices => "n_devices",
            SweepVariable::TaskBytes => "task_bytes",
            SweepVariable::BlockBytes => "block_bytes",
            SweepVariable::NMiners => "n_miners",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Policy rolled out by the eval track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Baseline(BaselineKind),
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub policy: PolicySpec,
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            policy: PolicySpec::Baseline(BaselineKind::GreedyUtility),
            episodes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub game: GameConfig,
    pub max_iters: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            game: GameConfig::default(),
            max_iters: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub source: ScenarioSource,
    pub track: Track,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_base: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "cooperative")]
    pub mode: Mode,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub solve: SolveConfig,
}

fn one() -> usize {
    1
}

fn cooperative() -> Mode {
    Mode::Cooperative
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::Validation("repetitions must be >= 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Validation("sweep.values must not be empty".into()));
            }
            if s.values.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Validation(
                    "sweep.values must be strictly increasing".into(),
                ));
            }
            if s.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Validation("sweep.values must be positive".into()));
            }
            let integral = matches!(s.variable, SweepVariable::NDevices | SweepVariable::NMiners);
            if integral && s.values.iter().any(|v| v.fract() != 0.0) {
                return Err(Error::Validation(format!(
                    "{} sweep values must be integers",
                    s.variable.as_str()
                )));
            }
            if s.variable == SweepVariable::NDevices
                && matches!(self.source, ScenarioSource::File { .. })
            {
                return Err(Error::Validation(
                    "an n_devices sweep needs a generator source".into(),
                ));
            }
        }
        if self.track == Track::Train {
            self.train.validate()?;
        }
        if self.track == Track::Eval && self.eval.episodes == 0 {
            return Err(Error::Validation("eval.episodes must be >= 1".into()));
        }
        if self.env.steps_per_episode == 0 {
            return Err(Error::Validation(
                "env.steps_per_episode must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// Scenario for one sweep point.
pub fn resolve_scenario(
    source: &ScenarioSource,
    sweep: Option<(SweepVariable, f64)>,
) -> Result<Scenario> {
    let mut s = match source {
        ScenarioSource::File { path } => load_scenario(path)?,
        ScenarioSource::Generator { params } => {
            let mut p = params.clone();
            if let Some((SweepVariable::NDevices, v)) = sweep {
                let n = v as usize;
                p.n_devices = n;
                p.consensus.num_miners = n.max(2);
                p.consensus = p.consensus.split_evenly(n.max(2));
            }
            generate_scenario(&p)?
        }
    };
    match sweep {
        Some((SweepVariable::TaskBytes, v)) => {
            for t in &mut s.tasks {
                t.input_bytes = v;
            }
            if let Some(r) = &mut s.task_ranges {
                r.input_bytes = Range::fixed(v);
            }
        }
        Some((SweepVariable::BlockBytes, v)) => {
            s.consensus.block_bytes = v;
            s.consensus = s.consensus.split_evenly(s.consensus.num_miners);
        }
        Some((SweepVariable::NMiners, v)) => {
            s.consensus.num_miners = v as usize;
            s.consensus = s.consensus.split_evenly(v as usize);
        }
        _ => {}
    }
    s.validate()?;
    Ok(s)
}

pub fn scenario_digest(s: &Scenario) -> Result<String> {
    Ok(hex(&Sha256::digest(s.to_json_string()?.as_bytes())))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-episode evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub episode: usize,
    pub mean_system_reward: f64,
    pub mean_offload_utility: f64,
    pub mean_mining_utility: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Per-slot system reward.
    pub mean_system_reward: f64,
    /// Per-slot sum of offloading utilities.
    pub mean_offload_utility: f64,
    /// Per-slot offloading utility per device.
    pub mean_device_offload_utility: f64,
    pub mean_mining_utility: f64,
    /// Violations per device-slot.
    pub violation_rate: f64,
    pub episodes: Vec<EvalEpisode>,
}

/// Rolls `policy` out for `episodes` episodes without exploration or learning.
/// Episode `e` starts from `env.reset(seed + e)`; the policy's own randomness
/// comes from a stream seeded by `seed`.
pub fn evaluate_policy(
    policy: &mut dyn JointPolicy,
    env: &Env,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Validation("episodes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let steps = env.config().steps_per_episode;
    let n = env.num_agents() as f64;
    let mut rows = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut state = env.reset(seed.wrapping_add(e as u64));
        let (mut sys, mut off, mut mine, mut viol) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..steps {
            let joint = policy.act(env, &state, &mut rng as &mut dyn RngCore)?;
            if joint.len() != env.num_agents() {
                return Err(Error::Contract(format!(
                    "policy produced {} actions for {} agents",
                    joint.len(),
                    env.num_agents()
                )));
            }
            let out = env.step(&state, &joint)?;
            sys += out.system_reward;
            off += out.total_offload_utility();
            mine += out.total_mining_utility();
            viol += out.violations.len();
            state = out.next_state;
        }
        let t = steps as f64;
        rows.push(EvalEpisode {
            episode: e,
            mean_system_reward: sys / t,
            mean_offload_utility: off / t,
            mean_mining_utility: mine / t,
            violation_rate: viol as f64 / (t * n),
        });
    }
    let mean = |f: fn(&EvalEpisode) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let off = mean(|r| r.mean_offload_utility);
    Ok(EvalSummary {
        mean_system_reward: mean(|r| r.mean_system_reward),
        mean_offload_utility: off,
        mean_device_offload_utility: off / n,
        mean_mining_utility: mean(|r| r.mean_mining_utility),
        violation_rate: mean(|r| r.violation_rate),
        episodes: rows,
    })
}

/// One consensus-bench row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRow {
    pub scheme: String,
    pub n_miners: usize,
    pub block_bytes: f64,
    pub latency_s: f64,
    pub bandwidth_bytes: f64,
    /// Outcome of a simulated honest round; empty for DPoS, which is not simulated.
    pub accepted: Option<bool>,
}

/// PoR and DPoS latency and bandwidth for the scenario's consensus settings,
/// with the block split evenly and the per-miner verification work set to
/// the DPoS work divided by the number of miners. Device 0 is the
/// representative miner. The PoR round itself is simulated over `n_miners`
/// copies of device 0.
pub fn consensus_bench(s: &Scenario, seed: u64) -> Result<Vec<ConsensusRow>> {
    let n = s.consensus.num_miners;
    let cc = s.consensus.split_evenly(n);
    let dev = &s.devices[0];
    let phi = dev.cpu_budget_hz * (cc.dpos_verify_cycles / cc.dpos_verify_budget_hz) / n as f64;

    let bench = Scenario {
        devices: vec![dev.clone(); n],
        tasks: vec![s.tasks[0].clone(); n],
        consensus: cc.clone(),
        task_ranges: None,
        ..s.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = synthetic_block(&cc, &mut rng);
    let miners = select_miners(&vec![1.0; n], n, 0)?.miners;
    let outcome = run_por_round(
        &block,
        &miners,
        &bench,
        &vec![phi; n],
        &mut Chain::new(),
        &mut rng,
    )?;

    Ok(vec![
        ConsensusRow {
            scheme: Scheme::Por.as_str().into(),
            n_miners: n,
            block_bytes: cc.block_bytes,
            latency_s: por_latency(dev, phi, &cc),
            bandwidth_bytes: bandwidth_cost(Scheme::Por, &cc, n),
            accepted: Some(outcome.accepted),
        },
        ConsensusRow {
            scheme: Scheme::Dpos.as_str().into(),
            n_miners: n,
            block_bytes: cc.block_bytes,
            latency_s: dpos_latency(dev, &cc, n),
            bandwidth_bytes: bandwidth_cost(Scheme::Dpos, &cc, n),
            accepted: None,
        },
    ])
}

/// Per-device row of the solve-game track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRow {
    pub device: usize,
    pub action: usize,
    pub game_utility: f64,
    /// Own reward in the environment, with interference, at full budgets.
    pub coupled_reward: f64,
}

/// Equilibrium found by best-response dynamics from the all-local profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub instance_digest: String,
    pub profile: Vec<usize>,
    pub utilities: Vec<f64>,
    pub potential: f64,
    pub path_length: usize,
    pub verified: bool,
}

pub fn game_report(s: &Scenario, cfg: &SolveConfig) -> Result<GameReport> {
    let g = GameInstance::from_scenario(s, &cfg.game)?;
    let cert = g.solve_nash(&vec![0; s.num_devices()], cfg.max_iters)?;
    Ok(GameReport {
        instance_digest: g.digest(),
        profile: cert.profile,
        utilities: cert.utilities,
        potential: cert.potential,
        path_length: cert.improvement_path_length,
        verified: cert.verified,
    })
}

/// Solves the scenario's potential game and also scores the equilibrium
/// profile in the interference-coupled environment.
pub fn solve_game(
    s: &Scenario,
    cfg: &SolveConfig,
) -> Result<(Vec<GameRow>, BTreeMap<String, f64>)> {
    let cert = game_report(s, cfg)?;
    let env = Env::new(s.clone(), EnvConfig::default())?;
    let state = env.reset(s.seed);
    let state = crate::env::EnvState {
        tasks: s.tasks.clone(),
        ..state
    };
    let joint: Vec<OffloadAction> = cert
        .profile
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let d = &s.devices[i];
            let frac = if a == 0 {
                cfg.game.local_verify_fraction
            } else {
                cfg.game.offload_verify_fraction
            };
            OffloadAction {
                mode: OffloadMode::from_index(a),
                tx_power_w: d.max_tx_power_w,
                local_cpu_hz: d.cpu_budget_hz,
                verify_cycles: frac * d.verify_budget_cycles,
            }
        })
        .collect();
    let out = env.step(&state, &joint)?;
    let rows = cert
        .profile
        .iter()
        .enumerate()
        .map(|(i, &a)| GameRow {
            device: i,
            action: a,
            game_utility: cert.utilities[i],
            coupled_reward: out.per_agent_reward[i],
        })
        .collect();
    let mut summary = BTreeMap::new();
    summary.insert("potential".into(), cert.potential);
    summary.insert("improvement_steps".into(), cert.path_length as f64);
    summary.insert("verified".into(), if cert.verified { 1.0 } else { 0.0 });
    summary.insert(
        "n_offloading".into(),
        cert.profile.iter().filter(|a| **a > 0).count() as f64,
    );
    summary.insert("coupled_system_reward".into(), out.system_reward);
    summary.insert(
        "coupled_offload_utility".into(),
        out.total_offload_utility(),
    );
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: usize,
    pub sweep_value: Option<f64>,
    pub repetition: usize,
    pub seed: u64,
    pub scenario_digest: String,
    pub file: String,
    /// `ok` or `diverged`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub summary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub checkpoint_format_version: u32,
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_variable: String,
    pub sweep_value: Option<f64>,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over included runs.
    pub std: f64,
    pub runs: usize,
    pub excluded: usize,
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run output before it is written.
enum RunOutput {
    Train(Vec<crate::madrl::EpisodeMetrics>, String),
    Eval(Vec<EvalEpisode>),
    Consensus(Vec<ConsensusRow>),
    Game(Vec<GameRow>),
}

fn execute(
    spec: &ExperimentSpec,
    s: &Scenario,
    seed: u64,
) -> Result<(RunOutput, BTreeMap<String, f64>)> {
    let mut summary = BTreeMap::new();
    match spec.track {
        Track::Train => {
            let env = Env::new(s.clone(), spec.env.clone())?;
            let mut t: Trainer<f32> = Trainer::new(env, spec.train.clone(), spec.mode, seed)?;
            let metrics = t.train()?.to_vec();
            let tail = &metrics[metrics.len().saturating_sub(FINAL_WINDOW)..];
            let mean = |f: fn(&crate::madrl::EpisodeMetrics) -> f64| {
                tail.iter().map(f).sum::<f64>() / tail.len() as f64
            };
            summary.insert(
                "final_mean_system_reward".into(),
                mean(|m| m.mean_system_reward),
            );
            summary.insert(
                "final_mean_offload_utility".into(),
                mean(|m| m.mean_offload_utility),
            );
            summary.insert(
                "final_mean_mining_utility".into(),
                mean(|m| m.mean_mining_utility),
            );
            Ok((
                RunOutput::Train(metrics, t.policy_set().to_json()?),
                summary,
            ))
        }
        Track::Eval => {
            let env = Env::new(s.clone(), spec.env.clone())?;
            let mut policy: Box<dyn JointPolicy> = match &spec.eval.policy {
                PolicySpec::Baseline(k) => Box::new(BaselinePolicy::new(*k)),
                PolicySpec::Checkpoint(p) => Box::new(PolicySet::<f32>::load(p)?),
            };
            let e = evaluate_policy(policy.as_mut(), &env, spec.eval.episodes, seed)?;
            summary.insert("mean_system_reward".into(), e.mean_system_reward);
            summary.insert("mean_offload_utility".into(), e.mean_offload_utility);
            summary.insert(
                "mean_device_offload_utility".into(),
                e.mean_device_offload_utility,
            );
            summary.insert("mean_mining_utility".into(), e.mean_mining_utility);
            summary.insert("violation_rate".into(), e.violation_rate);
            Ok((RunOutput::Eval(e.episodes), summary))
        }
        Track::ConsensusBench => {
            let rows = consensus_bench(s, seed)?;
            for r in &rows {
                summary.insert(format!("{}_latency_s", r.scheme), r.latency_s);
                summary.insert(format!("{}_bandwidth_bytes", r.scheme), r.bandwidth_bytes);
            }
            Ok((RunOutput::Consensus(rows), summary))
        }
        Track::SolveGame => {
            let (rows, summary) = solve_game(s, &spec.solve)?;
            Ok((RunOutput::Game(rows), summary))
        }
    }
}

/// Runs every (sweep point, repetition) pair, writes all outputs and returns
/// the manifest. Repetitions run in parallel; files are written afterwards in
/// a fixed order, so outputs do not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Manifest> {
    spec.validate()?;
    let runs_dir = spec.output_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let points: Vec<Option<f64>> = match &spec.sweep {
        Some(s) => s.values.iter().map(|v| Some(*v)).collect(),
        None => vec![None],
    };
    let scenarios: Vec<Scenario> = points
        .iter()
        .map(|v| {
            resolve_scenario(
                &spec.source,
                v.map(|x| (spec.sweep.as_ref().expect("sweep").variable, x)),
            )
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.repetitions).map(move |r| (p, r)))
        .collect();

    let results: Vec<Result<(RunOutput, BTreeMap<String, f64>)>> = jobs
        .par_iter()
        .map(|&(p, r)| execute(spec, &scenarios[p], spec.seed_base + r as u64))
        .collect();

    let mut records = Vec::with_capacity(jobs.len());
    for (&(p, r), res) in jobs.iter().zip(results) {
        let file = format!("runs/p{p}_r{r}.csv");
        let path = spec.output_dir.join(&file);
        let seed = spec.seed_base + r as u64;
        let mut rec = RunRecord {
            point: p,
            sweep_value: points[p],
            repetition: r,
            seed,
            scenario_digest: scenario_digest(&scenarios[p])?,
            file: file.clone(),
            status: "ok".into(),
            error: None,
            summary: BTreeMap::new(),
        };
        match res {
            Ok((out, summary)) => {
                match out {
                    RunOutput::Train(rows, policy) => {
                        write_csv(&path, &rows)?;
                        fs::write(
                            spec.output_dir.join(format!("runs/p{p}_r{r}.policy.json")),
                            policy,
                        )?;
                    }
                    RunOutput::Eval(rows) => write_csv(&path, &rows)?,
                    RunOutput::Consensus(rows) => write_csv(&path, &rows)?,
                    RunOutput::Game(rows) => write_csv(&path, &rows)?,
                }
                rec.summary = summary;
            }
            Err(e @ Error::Diverged { .. }) => {
                rec.status = "diverged".into();
                rec.error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        records.push(rec);
    }

    let agg = aggregate(spec, &points, &records);
    write_csv(&spec.output_dir.join("aggregate.csv"), &agg)?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_format_version: crate::madrl::CHECKPOINT_VERSION,
        spec: spec.clone(),
        runs: records,
    };
    fs::write(
        spec.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Mean and population standard deviation of every summary metric per sweep
/// point, over runs with status `ok`.
pub fn aggregate(
    spec: &ExperimentSpec,
    points: &[Option<f64>],
    records: &[RunRecord],
) -> Vec<AggregateRow> {
    let var = spec.sweep.as_ref().map_or("none", |s| s.variable.as_str());
    let mut rows = Vec::new();
    for (p, value) in points.iter().enumerate() {
        let at: Vec<&RunRecord> = records.iter().filter(|r| r.point == p).collect();
        let ok: Vec<&RunRecord> = at.iter().copied().filter(|r| r.status == "ok").collect();
        let excluded = at.len() - ok.len();
        let metrics: Vec<&String> = ok
            .first()
            .map(|r| r.summary.keys().collect())
            .unwrap_or_default();
        for m in metrics {
            let xs: Vec<f64> = ok.iter().map(|r| r.summary[m]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var_ = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            rows.push(AggregateRow {
                sweep_variable: var.into(),
                sweep_value: *value,
                metric: m.clone(),
                mean,
                std: var_.sqrt(),
                runs: xs.len(),
                excluded,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(track: Track, dir: &Path) -> ExperimentSpec {
        ExperimentSpec {
            source: ScenarioSource::Generator {
                params: GeneratorParams::sample(3, 2, 4),
            },
            track,
            sweep: None,
            repetitions: 1,
            seed_base: 0,
            output_dir: dir.to_path_buf(),
            env: EnvConfig {
                steps_per_episode: 5,
                ..EnvConfig::default()
            },
            train: TrainConfig {
                episodes: 2,
                steps_per_episode: 4,
                batch_size: 4,
                warmup: 4,
                hidden: vec![8],
                ..TrainConfig::default()
            },
            mode: Mode::Cooperative,
            eval: EvalConfig {
                policy: PolicySpec::Baseline(BaselineKind::AllLocal),
                episodes: 2,
            },
            solve: SolveConfig::default(),
        }
    }

    #[test]
    fn sweep_must_increase() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(Track::Eval, dir.path());
        s.sweep = Some(Sweep {
            variable: SweepVariable::NMiners,
            values: vec![4.0, 2.0],
        });
        assert!(s.validate().is_err());
        s.sweep = Some(Sweep {
            variable: SweepVariable::NMiners,
            values: vec![2.5],
        });
        assert!(s.validate().is_err());
        s.repetitions = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn all_local_has_zero_offload_utility() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&spec(Track::Eval, dir.path())).unwrap();
        assert_eq!(m.runs[0].summary["mean_offload_utility"], 0.0);
    }

    #[test]
    fn single_repetition_aggregate_equals_run() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&spec(Track::SolveGame, dir.path())).unwrap();
        let agg = aggregate(&m.spec, &[None], &m.runs);
        for row in agg {
            assert_eq!(row.mean, m.runs[0].summary[&row.metric]);
            assert_eq!(row.std, 0.0);
        }
    }

    #[test]
    fn every_track_writes_its_files() {
        for track in [
            Track::Train,
            Track::Eval,
            Track::ConsensusBench,
            Track::SolveGame,
        ] {
            let dir = tempfile::tempdir().unwrap();
            run_experiment(&spec(track, dir.path())).unwrap();
            assert!(dir.path().join("aggregate.csv").exists());
            assert!(dir.path().join("manifest.json").exists());
            assert!(dir.path().join("runs/p0_r0.csv").exists());
        }
    }

    #[test]
    fn sweep_resolution() {
        let src = ScenarioSource::Generator {
            params: GeneratorParams::sample(3, 2, 4),
        };
        assert_eq!(
            resolve_scenario(&src, Some((SweepVariable::NDevices, 7.0)))
                .unwrap()
                .num_devices(),
            7
        );
        let s = resolve_scenario(&src, Some((SweepVariable::BlockBytes, 1e5))).unwrap();
        assert_eq!(s.consensus.block_bytes, 1e5);
        assert!((s.consensus.part_bytes - 1e5 / 3.0).abs() < 1e-9);
        let s = resolve_scenario(&src, Some((SweepVariable::TaskBytes, 2e6))).unwrap();
        assert!(s.tasks.iter().all(|t| t.input_bytes == 2e6));
    }
}
