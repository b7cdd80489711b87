//! Uplink communication and computing cost models, and the offloading utility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RadioConfig, Scenario, Task};

/// Where a device runs its task this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffloadMode {
    Local,
    /// Offload to the edge server over sub-band `channel` (0-based).
    Offload {
        channel: usize,
    },
}

impl OffloadMode {
    pub fn channel(&self) -> Option<usize> {
        match *self {
            OffloadMode::Local => None,
            OffloadMode::Offload { channel } => Some(channel),
        }
    }

    /// Game-style index: 0 for local, `k + 1` for sub-band `k`.
    pub fn index(&self) -> usize {
        self.channel().map_or(0, |k| k + 1)
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            OffloadMode::Local
        } else {
            OffloadMode::Offload { channel: i - 1 }
        }
    }
}

/// One device's decision for a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadAction {
    pub mode: OffloadMode,
    /// Only meaningful when offloading.
    pub tx_power_w: f64,
    pub local_cpu_hz: f64,
    /// CPU cycles committed to verifying this device's block part.
    pub verify_cycles: f64,
}

impl OffloadAction {
    pub fn local(local_cpu_hz: f64, verify_cycles: f64) -> Self {
        Self {
            mode: OffloadMode::Local,
            tx_power_w: 0.0,
            local_cpu_hz,
            verify_cycles,
        }
    }

    pub fn offload(channel: usize, tx_power_w: f64, local_cpu_hz: f64, verify_cycles: f64) -> Self {
        Self {
            mode: OffloadMode::Offload { channel },
            tx_power_w,
            local_cpu_hz,
            verify_cycles,
        }
    }
}

/// Latency and energy of one device's task under a given mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub latency_s: f64,
    pub energy_j: f64,
    /// Uplink rate in bit/s, zero for local execution.
    pub rate_bps: f64,
    /// Uplink transmission time, zero for local execution.
    pub uplink_s: f64,
    /// Execution time at the edge server or on the device.
    pub execution_s: f64,
}

impl CostReport {
    pub fn exceeds_deadline(&self, task: &Task) -> bool {
        self.latency_s > task.deadline_s
    }
}

/// Shannon rate of device `n` on its chosen sub-band, with every other device
/// offloading on the same sub-band counted as interference.
pub fn uplink_rate(n: usize, actions: &[OffloadAction], scenario: &Scenario) -> Result<f64> {
    let gains = scenario.channel_gains();
    uplink_rate_with_gains(n, actions, &gains, &scenario.radio)
}

/// Same as [`uplink_rate`] with precomputed per-device gains.
pub fn uplink_rate_with_gains(
    n: usize,
    actions: &[OffloadAction],
    gains: &[f64],
    radio: &RadioConfig,
) -> Result<f64> {
    let action = actions.get(n).ok_or(Error::Dimension {
        expected: n + 1,
        actual: actions.len(),
    })?;
    let k = action.mode.channel().ok_or_else(|| {
        Error::Contract(format!(
            "uplink_rate called for device {n} which executes locally"
        ))
    })?;
    let interference: f64 = actions
        .iter()
        .enumerate()
        .filter(|&(j, a)| j != n && a.mode.channel() == Some(k))
        .map(|(j, a)| a.tx_power_w * gains[j])
        .sum();
    let sinr = action.tx_power_w * gains[n] / (radio.noise_power_w + interference);
    Ok(radio.subband_hz * (1.0 + sinr).log2())
}

/// Cost of executing `task` on the device at `action.local_cpu_hz`. The mode is
/// ignored, so this also yields the local reference cost for offloaders.
pub fn local_cost(task: &Task, action: &OffloadAction, energy_coeff: f64) -> CostReport {
    let f = action.local_cpu_hz;
    let t = task.cycles / f;
    CostReport {
        latency_s: t,
        energy_j: energy_coeff * f * f * task.cycles,
        rate_bps: 0.0,
        uplink_s: 0.0,
        execution_s: t,
    }
}

/// Cost of offloading `task` at uplink rate `rate_bps`. Result download is not modelled.
pub fn offload_cost(
    task: &Task,
    rate_bps: f64,
    tx_power_w: f64,
    edge_cpu_hz: f64,
) -> Result<CostReport> {
    if !(rate_bps > 0.0) {
        return Err(Error::Domain(format!(
            "uplink rate must be > 0, got {rate_bps}"
        )));
    }
    let up = task.input_bits() / rate_bps;
    let ex = task.cycles / edge_cpu_hz;
    Ok(CostReport {
        latency_s: up + ex,
        energy_j: tx_power_w * up,
        rate_bps,
        uplink_s: up,
        execution_s: ex,
    })
}

/// Weighted relative time/energy saving of `chosen` over `local`. Zero when
/// they coincide, negative when offloading is worse.
pub fn offloading_utility(
    local: &CostReport,
    chosen: &CostReport,
    weight_time: f64,
    weight_energy: f64,
) -> f64 {
    weight_time * (local.latency_s - chosen.latency_s) / local.latency_s
        + weight_energy * (local.energy_j - chosen.energy_j) / local.energy_j
}

/// Local reference and actual cost of one device under a joint action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCost {
    pub local: CostReport,
    pub chosen: CostReport,
    pub utility: f64,
}

/// Per-device costs and utilities for the whole joint action.
pub fn device_costs(actions: &[OffloadAction], scenario: &Scenario) -> Result<Vec<DeviceCost>> {
    device_costs_for_tasks(actions, scenario, &scenario.tasks)
}

/// As [`device_costs`] with an explicit task list (the environment redraws tasks).
pub fn device_costs_for_tasks(
    actions: &[OffloadAction],
    scenario: &Scenario,
    tasks: &[Task],
) -> Result<Vec<DeviceCost>> {
    let n = scenario.num_devices();
    if actions.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: actions.len(),
        });
    }
    let gains = scenario.channel_gains();
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let dev = &scenario.devices[i];
            let task = &tasks[i];
            let local = local_cost(task, a, dev.energy_coeff);
            let chosen = match a.mode {
                OffloadMode::Local => local,
                OffloadMode::Offload { .. } => {
                    let rate = uplink_rate_with_gains(i, actions, &gains, &scenario.radio)?;
                    offload_cost(task, rate, a.tx_power_w, scenario.edge_cpu_hz)?
                }
            };
            let utility = match a.mode {
                OffloadMode::Local => 0.0,
                OffloadMode::Offload { .. } => {
                    offloading_utility(&local, &chosen, dev.weight_time, dev.weight_energy)
                }
            };
            Ok(DeviceCost {
                local,
                chosen,
                utility,
            })
        })
        .collect()
}

/// Sum of the per-device offloading utilities under the joint action.
pub fn total_offloading_utility(actions: &[OffloadAction], scenario: &Scenario) -> Result<f64> {
    Ok(device_costs(actions, scenario)?
        .iter()
        .map(|c| c.utility)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_scenario, GeneratorParams};

    fn scenario(n: usize, k: usize) -> Scenario {
        generate_scenario(&GeneratorParams::sample(n, k, 42)).unwrap()
    }

    /// Power that makes `p * h == noise` for device `i`.
    fn unit_snr_power(s: &Scenario, i: usize) -> f64 {
        s.radio.noise_power_w / s.channel_gains()[i]
    }

    #[test]
    fn unit_snr_gives_bandwidth() {
        let s = scenario(1, 1);
        let a = [OffloadAction::offload(0, unit_snr_power(&s, 0), 1e9, 1e7)];
        let r = uplink_rate(0, &a, &s).unwrap();
        assert!((r / s.radio.subband_hz - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_equal_interferer_gives_log_one_and_a_half() {
        let s = scenario(2, 1);
        let a = [
            OffloadAction::offload(0, unit_snr_power(&s, 0), 1e9, 1e7),
            OffloadAction::offload(0, unit_snr_power(&s, 1), 1e9, 1e7),
        ];
        let r = uplink_rate(0, &a, &s).unwrap();
        assert!((r / s.radio.subband_hz - 1.5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn different_channels_do_not_interfere() {
        let s = scenario(2, 2);
        let p0 = unit_snr_power(&s, 0);
        let p1 = unit_snr_power(&s, 1);
        let a = [
            OffloadAction::offload(0, p0, 1e9, 1e7),
            OffloadAction::offload(1, p1, 1e9, 1e7),
        ];
        for n in 0..2 {
            assert!((uplink_rate(n, &a, &s).unwrap() / s.radio.subband_hz - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_of_local_device_is_a_contract_error() {
        let s = scenario(1, 1);
        let a = [OffloadAction::local(1e9, 1e7)];
        assert!(matches!(uplink_rate(0, &a, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn local_cost_identities() {
        let task = Task {
            cycles: 1e9,
            input_bytes: 1e6,
            deadline_s: 2.0,
        };
        let c = local_cost(&task, &OffloadAction::local(1e9, 1.0), 1e-27);
        assert!((c.latency_s - 1.0).abs() < 1e-15);
        assert!((c.energy_j - 1.0).abs() < 1e-12);
        let d = local_cost(&task, &OffloadAction::local(2e9, 1.0), 1e-27);
        assert!((d.latency_s - 0.5).abs() < 1e-15);
        assert!((d.energy_j / c.energy_j - 4.0).abs() < 1e-12);
    }

    #[test]
    fn offload_cost_arithmetic() {
        // 1e6 bits = 125_000 bytes
        let task = Task {
            cycles: 1e9,
            input_bytes: 125_000.0,
            deadline_s: 2.0,
        };
        let c = offload_cost(&task, 1e6, 0.1, 1e10).unwrap();
        assert!((c.latency_s - 1.1).abs() < 1e-12);
        assert!((c.uplink_s + c.execution_s - c.latency_s).abs() == 0.0);
        assert!((c.energy_j - 0.1).abs() < 1e-12);
        let fast = offload_cost(&task, 1e6, 0.1, 1e300).unwrap();
        assert!((fast.latency_s - 1.0).abs() < 1e-12);
        assert!(matches!(
            offload_cost(&task, 0.0, 0.1, 1e10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn offloading_utility_cases() {
        let local = CostReport {
            latency_s: 2.0,
            energy_j: 4.0,
            rate_bps: 0.0,
            uplink_s: 0.0,
            execution_s: 2.0,
        };
        assert_eq!(offloading_utility(&local, &local, 0.3, 0.7), 0.0);
        let half = CostReport {
            latency_s: 1.0,
            energy_j: 2.0,
            ..local
        };
        assert!((offloading_utility(&local, &half, 0.5, 0.5) - 0.5).abs() < 1e-15);
        let slow = CostReport {
            latency_s: 4.0,
            energy_j: 4.0,
            ..local
        };
        assert!((offloading_utility(&local, &slow, 1.0, 0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_local_total_is_zero() {
        let s = scenario(4, 2);
        let a: Vec<_> = (0..4).map(|_| OffloadAction::local(1e9, 1e7)).collect();
        assert_eq!(total_offloading_utility(&a, &s).unwrap(), 0.0);
    }

    #[test]
    fn single_offloader_total_equals_its_utility() {
        let s = scenario(1, 1);
        let a = [OffloadAction::offload(0, 0.2, 1e9, 1e7)];
        let costs = device_costs(&a, &s).unwrap();
        assert!(
            costs[0].utility > 0.0,
            "near device should gain by offloading"
        );
        assert_eq!(total_offloading_utility(&a, &s).unwrap(), costs[0].utility);
    }

    #[test]
    fn total_matches_term_by_term_recomputation() {
        // independent re-evaluation written directly from the formulas
        let s = scenario(3, 2);
        let a = [
            OffloadAction::offload(0, 0.15, 8e8, 1e7),
            OffloadAction::offload(0, 0.05, 6e8, 1e7),
            OffloadAction::offload(1, 0.2, 9e8, 1e7),
        ];
        let mut expected = 0.0;
        for n in 0..3 {
            let d = &s.devices[n];
            let t = &s.tasks[n];
            let dist = |i: usize| s.devices[i].position_km[0].hypot(s.devices[i].position_km[1]);
            let gain = |i: usize| 10f64.powf(-(140.7 + 36.7 * dist(i).log10()) / 10.0);
            let k = a[n].mode.channel().unwrap();
            let mut interf = 0.0;
            for j in 0..3 {
                if j != n && a[j].mode.channel() == Some(k) {
                    interf += a[j].tx_power_w * gain(j);
                }
            }
            let rate = s.radio.subband_hz
                * (1.0 + a[n].tx_power_w * gain(n) / (s.radio.noise_power_w + interf)).log2();
            let t_off = t.input_bytes * 8.0 / rate + t.cycles / s.edge_cpu_hz;
            let e_off = a[n].tx_power_w * t.input_bytes * 8.0 / rate;
            let t_l = t.cycles / a[n].local_cpu_hz;
            let e_l = d.energy_coeff * a[n].local_cpu_hz.powi(2) * t.cycles;
            expected += d.weight_time * (t_l - t_off) / t_l + d.weight_energy * (e_l - e_off) / e_l;
        }
        let got = total_offloading_utility(&a, &s).unwrap();
        assert!(
            ((got - expected) / expected.abs().max(1e-300)).abs() < 1e-12,
            "{got} vs {expected}"
        );
    }
}
