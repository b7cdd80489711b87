//! Multi-agent Markov game over one scenario.
//!
//! Each slot every device picks an [`OffloadAction`]; the environment coerces
//! it into the feasible box, evaluates the offloading and mining costs and
//! pays each device `J_off + J_mine`. Channel gains and tasks are fixed within
//! an episode; tasks are redrawn on [`Env::reset`] when the scenario carries
//! task ranges.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comms::{device_costs_for_tasks, CostReport, OffloadAction, OffloadMode};
use crate::consensus::{mining_utility, por_latency, select_miners};
use crate::error::{Error, Result};
use crate::model::{Scenario, Task};

/// Smallest fraction of a budget a coerced action may use.
const MIN_BUDGET_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningParticipation {
    /// Every device earns mining utility each slot.
    AllDevices,
    /// Only the `num_miners` highest-reputation devices earn it.
    SelectedMiners,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub steps_per_episode: usize,
    pub mining: MiningParticipation,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            steps_per_episode: 100,
            mining: MiningParticipation::AllDevices,
        }
    }
}

/// The five-part state matrix plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Per-device task; `(input_bytes, cycles)` form the task state.
    pub tasks: Vec<Task>,
    /// `channel_state[n][k] == 1` iff device `n` used sub-band `k` last slot.
    pub channel_state: Vec<Vec<u8>>,
    pub power_state: Vec<Vec<f64>>,
    /// Available `(local cpu hz, verification cycles)` per device.
    pub resource_state: Vec<[f64; 2]>,
    /// Pending transaction part size per device, in bytes.
    pub transaction_state: Vec<f64>,
    pub pending_tx: usize,
    pub slot: u64,
}

impl EnvState {
    pub fn task_state(&self) -> Vec<[f64; 2]> {
        self.tasks
            .iter()
            .map(|t| [t.input_bytes, t.cycles])
            .collect()
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex(&Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Channel,
    TxPower,
    LocalCpu,
    VerifyCpu,
    Deadline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub device: usize,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub latency_s: f64,
    pub utility: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    /// The actions after feasibility coercion.
    pub applied: Vec<OffloadAction>,
    pub per_agent_reward: Vec<f64>,
    pub system_reward: f64,
    /// Offloading utility entering the reward, after the deadline penalty.
    pub offload_utility: Vec<f64>,
    pub per_agent_cost: Vec<CostReport>,
    pub mining_report: Vec<MiningReport>,
    pub violations: Vec<Violation>,
}

impl StepOutcome {
    pub fn total_offload_utility(&self) -> f64 {
        self.offload_utility.iter().sum()
    }

    pub fn total_mining_utility(&self) -> f64 {
        self.mining_report.iter().map(|m| m.utility).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    scenario: Scenario,
    config: EnvConfig,
    input_scale: f64,
    cycle_scale: f64,
}

impl Env {
    pub fn new(scenario: Scenario, config: EnvConfig) -> Result<Self> {
        scenario.validate()?;
        let (input_scale, cycle_scale) = match &scenario.task_ranges {
            Some(r) => (r.input_bytes.max, r.cycles.max),
            None => (
                scenario
                    .tasks
                    .iter()
                    .map(|t| t.input_bytes)
                    .fold(0.0, f64::max),
                scenario.tasks.iter().map(|t| t.cycles).fold(0.0, f64::max),
            ),
        };
        Ok(Self {
            scenario,
            config,
            input_scale,
            cycle_scale,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_agents(&self) -> usize {
        self.scenario.num_devices()
    }

    pub fn num_subbands(&self) -> usize {
        self.scenario.num_subbands()
    }

    /// Length of one agent's local observation: task (2), channel row (K),
    /// power row (K), resources (2), transaction (1).
    pub fn observation_dim(&self) -> usize {
        2 + 2 * self.num_subbands() + 2 + 1
    }

    /// Fresh episode state. Pure function of the scenario and `seed`.
    pub fn reset(&self, seed: u64) -> EnvState {
        let s = &self.scenario;
        let n = s.num_devices();
        let k = s.num_subbands();
        let tasks = match &s.task_ranges {
            Some(r) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| r.sample(&mut rng)).collect()
            }
            None => s.tasks.clone(),
        };
        EnvState {
            tasks,
            channel_state: vec![vec![0; k]; n],
            power_state: vec![vec![0.0; k]; n],
            resource_state: self.full_resources(),
            transaction_state: vec![s.consensus.part_bytes; n],
            pending_tx: s.consensus.tx_per_block,
            slot: 0,
        }
    }

    fn full_resources(&self) -> Vec<[f64; 2]> {
        self.scenario
            .devices
            .iter()
            .map(|d| [d.cpu_budget_hz, d.verify_budget_cycles])
            .collect()
    }

    /// Clamps an action into the feasible box of device `n`, recording every
    /// coordinate that had to move.
    pub fn coerce(
        &self,
        n: usize,
        action: &OffloadAction,
        violations: &mut Vec<Violation>,
    ) -> OffloadAction {
        let dev = &self.scenario.devices[n];
        let k = self.num_subbands();
        let mut a = *action;
        let mut flag = |c| {
            violations.push(Violation {
                device: n,
                constraint: c,
            })
        };
        if let OffloadMode::Offload { channel } = a.mode {
            if channel >= k {
                flag(Constraint::Channel);
                a.mode = OffloadMode::Offload { channel: k - 1 };
            }
            if let Some(p) = clamp_budget(a.tx_power_w, dev.max_tx_power_w) {
                flag(Constraint::TxPower);
                a.tx_power_w = p;
            }
        }
        if let Some(f) = clamp_budget(a.local_cpu_hz, dev.cpu_budget_hz) {
            flag(Constraint::LocalCpu);
            a.local_cpu_hz = f;
        }
        if let Some(phi) = clamp_budget(a.verify_cycles, dev.verify_budget_cycles) {
            flag(Constraint::VerifyCpu);
            a.verify_cycles = phi;
        }
        a
    }

    pub fn step(&self, state: &EnvState, joint_action: &[OffloadAction]) -> Result<StepOutcome> {
        let s = &self.scenario;
        let n = s.num_devices();
        let k = s.num_subbands();
        if joint_action.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: joint_action.len(),
            });
        }
        if state.tasks.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: state.tasks.len(),
            });
        }
        let mut violations = Vec::new();
        let applied: Vec<OffloadAction> = joint_action
            .iter()
            .enumerate()
            .map(|(i, a)| self.coerce(i, a, &mut violations))
            .collect();

        let costs = device_costs_for_tasks(&applied, s, &state.tasks)?;
        let mut offload_utility = Vec::with_capacity(n);
        for (i, c) in costs.iter().enumerate() {
            if c.chosen.exceeds_deadline(&state.tasks[i]) {
                violations.push(Violation {
                    device: i,
                    constraint: Constraint::Deadline,
                });
                offload_utility.push(-s.devices[i].weight_time);
            } else {
                offload_utility.push(c.utility);
            }
        }

        let mut mining_report: Vec<MiningReport> = applied
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let latency_s = por_latency(&s.devices[i], a.verify_cycles, &s.consensus);
                MiningReport {
                    latency_s,
                    utility: mining_utility(latency_s, state.tasks[i].deadline_s),
                    selected: true,
                }
            })
            .collect();
        if self.config.mining == MiningParticipation::SelectedMiners {
            let reputation: Vec<f64> = mining_report.iter().map(|m| m.utility).collect();
            let m = s.consensus.num_miners.min(n);
            let selected = select_miners(&reputation, m, state.slot)?.device_indices();
            for (i, r) in mining_report.iter_mut().enumerate() {
                if !selected.contains(&i) {
                    r.selected = false;
                    r.utility = 0.0;
                }
            }
        }

        let per_agent_reward: Vec<f64> = offload_utility
            .iter()
            .zip(&mining_report)
            .map(|(off, m)| off + m.utility)
            .collect();
        let system_reward = per_agent_reward.iter().sum();

        let mut channel_state = vec![vec![0u8; k]; n];
        let mut power_state = vec![vec![0.0; k]; n];
        for (i, a) in applied.iter().enumerate() {
            if let Some(ch) = a.mode.channel() {
                channel_state[i][ch] = 1;
                power_state[i][ch] = a.tx_power_w;
            }
        }
        violations.sort_by_key(|v| (v.device, v.constraint as u8));
        let next_state = EnvState {
            tasks: state.tasks.clone(),
            channel_state,
            power_state,
            resource_state: self.full_resources(),
            transaction_state: state.transaction_state.clone(),
            pending_tx: state.pending_tx,
            slot: state.slot + 1,
        };
        Ok(StepOutcome {
            next_state,
            applied,
            per_agent_reward,
            system_reward,
            offload_utility,
            per_agent_cost: costs.iter().map(|c| c.chosen).collect(),
            mining_report,
            violations,
        })
    }

    /// Local observation of device `n`, normalised to roughly unit scale:
    /// `[D/D_max, C/C_max, channel row.., power row / P.., f/F, phi/Phi, Tr/B]`.
    pub fn observe(&self, state: &EnvState, n: usize) -> Result<Vec<f64>> {
        let dev = self.scenario.devices.get(n).ok_or(Error::Dimension {
            expected: self.num_agents(),
            actual: n,
        })?;
        let mut o = Vec::with_capacity(self.observation_dim());
        o.push(state.tasks[n].input_bytes / self.input_scale);
        o.push(state.tasks[n].cycles / self.cycle_scale);
        o.extend(state.channel_state[n].iter().map(|&c| c as f64));
        o.extend(state.power_state[n].iter().map(|p| p / dev.max_tx_power_w));
        o.push(state.resource_state[n][0] / dev.cpu_budget_hz);
        o.push(state.resource_state[n][1] / dev.verify_budget_cycles);
        o.push(state.transaction_state[n] / self.scenario.consensus.block_bytes);
        Ok(o)
    }

    pub fn observe_all(&self, state: &EnvState) -> Vec<Vec<f64>> {
        (0..self.num_agents())
            .map(|n| self.observe(state, n).expect("index in range"))
            .collect()
    }
}

/// `Some(clamped)` when `v` lies outside `(0, budget]`.
fn clamp_budget(v: f64, budget: f64) -> Option<f64> {
    if v > 0.0 && v <= budget {
        None
    } else if v > budget {
        Some(budget)
    } else {
        Some(budget * MIN_BUDGET_FRACTION)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct TraceRecord<'a> {
    episode: usize,
    step: usize,
    state_digest: String,
    next_state_digest: String,
    actions: &'a [OffloadAction],
    per_agent_reward: &'a [f64],
    system_reward: f64,
    violations: &'a [Violation],
}

/// JSON-lines episode trace, one record per step.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(
        &mut self,
        episode: usize,
        step: usize,
        state: &EnvState,
        outcome: &StepOutcome,
    ) -> Result<()> {
        let rec = TraceRecord {
            episode,
            step,
            state_digest: state.digest(),
            next_state_digest: outcome.next_state.digest(),
            actions: &outcome.applied,
            per_agent_reward: &outcome.per_agent_reward,
            system_reward: outcome.system_reward,
            violations: &outcome.violations,
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::total_offloading_utility;
    use crate::model::{generate_scenario, GeneratorParams};

    fn env(n: usize, k: usize) -> Env {
        Env::new(
            generate_scenario(&GeneratorParams::sample(n, k, 21)).unwrap(),
            EnvConfig::default(),
        )
        .unwrap()
    }

    fn local_all(e: &Env) -> Vec<OffloadAction> {
        e.scenario()
            .devices
            .iter()
            .map(|d| OffloadAction::local(d.cpu_budget_hz, 1e6))
            .collect()
    }

    #[test]
    fn reset_is_deterministic_and_empty() {
        let e = env(50, 3);
        let a = e.reset(4);
        assert_eq!(a, e.reset(4));
        assert_eq!(a.channel_state.len(), 50);
        assert!(a.channel_state.iter().flatten().all(|c| *c == 0));
        assert_eq!(a.pending_tx, 10);
    }

    #[test]
    fn all_local_reward_is_mining_only() {
        let e = env(4, 2);
        let st = e.reset(0);
        let out = e.step(&st, &local_all(&e)).unwrap();
        let mining: f64 = out.mining_report.iter().map(|m| m.utility).sum();
        assert!(out.offload_utility.iter().all(|u| *u == 0.0 || *u < 0.0));
        let deadline_ok = out
            .violations
            .iter()
            .all(|v| v.constraint != Constraint::Deadline);
        if deadline_ok {
            assert!((out.system_reward - mining).abs() < 1e-12);
        }
    }

    #[test]
    fn single_offloader_reward_composes() {
        let e = env(1, 1);
        let st = e.reset(0);
        let a = [OffloadAction::offload(0, 0.2, 1e9, 1e6)];
        let out = e.step(&st, &a).unwrap();
        let scen = Scenario {
            tasks: st.tasks.clone(),
            ..e.scenario().clone()
        };
        let j_off = total_offloading_utility(&a, &scen).unwrap();
        let t = por_latency(&scen.devices[0], 1e6, &scen.consensus);
        let j_mine = mining_utility(t, st.tasks[0].deadline_s);
        assert!(out.violations.is_empty());
        assert!((out.system_reward - (j_off + j_mine)).abs() < 1e-12);
    }

    #[test]
    fn interference_lowers_reward() {
        let e = env(3, 1);
        let st = e.reset(0);
        let crowded: Vec<_> = (0..3)
            .map(|_| OffloadAction::offload(0, 0.2, 1e9, 1e6))
            .collect();
        let out = e.step(&st, &crowded).unwrap();
        // no-interference reference: each device alone
        let mut solo = 0.0;
        for i in 0..3 {
            let mut acts = local_all(&e);
            acts[i] = crowded[i];
            let o = e.step(&st, &acts).unwrap();
            solo += o.offload_utility[i];
        }
        assert!(out.total_offload_utility() < solo);
        for (i, c) in out.per_agent_cost.iter().enumerate() {
            assert!(c.rate_bps > 0.0, "device {i}");
        }
    }

    #[test]
    fn infeasible_actions_are_coerced_and_flagged() {
        let e = env(2, 2);
        let st = e.reset(0);
        let a = [
            OffloadAction::offload(9, 5.0, 1e12, -1.0),
            OffloadAction::local(1e9, 1e6),
        ];
        let out = e.step(&st, &a).unwrap();
        let kinds: Vec<_> = out
            .violations
            .iter()
            .filter(|v| v.device == 0)
            .map(|v| v.constraint)
            .collect();
        for c in [
            Constraint::Channel,
            Constraint::TxPower,
            Constraint::LocalCpu,
            Constraint::VerifyCpu,
        ] {
            assert!(kinds.contains(&c), "{c:?}");
        }
        assert_eq!(out.applied[0].mode, OffloadMode::Offload { channel: 1 });
        // stepping again with the coerced action is violation-free apart from deadlines
        let again = e.step(&st, &out.applied).unwrap();
        assert!(again
            .violations
            .iter()
            .all(|v| v.constraint == Constraint::Deadline));
    }

    #[test]
    fn observation_layout() {
        let e = env(3, 3);
        let st = e.reset(1);
        let o = e.observe(&st, 2).unwrap();
        assert_eq!(o.len(), 2 + 3 + 3 + 2 + 1);
        assert_eq!(o.len(), e.observation_dim());
    }

    #[test]
    fn channel_rows_have_at_most_one_entry() {
        let e = env(4, 3);
        let st = e.reset(0);
        let a: Vec<_> = (0..4)
            .map(|i| OffloadAction::offload(i % 3, 0.1, 1e9, 1e6))
            .collect();
        let out = e.step(&st, &a).unwrap();
        assert!(out.next_state.channel_state.iter().all(|row| row
            .iter()
            .map(|c| *c as u32)
            .sum::<u32>()
            <= 1));
    }

    #[test]
    fn selected_miners_only_earn_mining_utility() {
        let mut scen = generate_scenario(&GeneratorParams::sample(4, 2, 3)).unwrap();
        scen.consensus.num_miners = 2;
        let e = Env::new(
            scen,
            EnvConfig {
                mining: MiningParticipation::SelectedMiners,
                ..Default::default()
            },
        )
        .unwrap();
        let st = e.reset(0);
        let acts: Vec<_> = [1e6, 4e7, 2e6, 3e7]
            .iter()
            .map(|phi| OffloadAction::local(1e9, *phi))
            .collect();
        let out = e.step(&st, &acts).unwrap();
        let selected: Vec<bool> = out.mining_report.iter().map(|m| m.selected).collect();
        assert_eq!(selected.iter().filter(|s| **s).count(), 2);
        assert!(out
            .mining_report
            .iter()
            .filter(|m| !m.selected)
            .all(|m| m.utility == 0.0));
    }

    #[test]
    fn trace_writes_one_line_per_step() {
        let e = env(2, 1);
        let st = e.reset(0);
        let out = e.step(&st, &local_all(&e)).unwrap();
        let mut w = TraceWriter::new(Vec::new());
        w.record(0, 0, &st, &out).unwrap();
        w.record(0, 1, &out.next_state, &out).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["state_digest"].as_str().unwrap().len(), 64);
    }
}
