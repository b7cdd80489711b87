use serde::{Deserialize, Serialize};

use crate::model::{ConsensusConfig, DeviceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Por,
    Dpos,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Por => "por",
            Scheme::Dpos => "dpos",
        }
    }
}

/// Clamped exponential utility of a mining latency against a deadline.
pub fn mining_utility(latency_s: f64, deadline_s: f64) -> f64 {
    ((1.0 - latency_s / deadline_s).exp() - 1.0).max(0.0)
}

/// Verification latency of one miner under the split-block scheme: part
/// download, local verification, two-party result exchange, result upload.
pub fn por_latency(miner: &DeviceConfig, verify_cycles: f64, cc: &ConsensusConfig) -> f64 {
    cc.part_bytes / miner.downlink_bytes_per_s
        + verify_cycles / miner.cpu_budget_hz
        + cc.broadcast_coeff_s_per_byte * cc.part_bytes * cc.network_scale(2)
        + cc.result_bytes / miner.uplink_bytes_per_s
}

/// Verification latency of one miner when every miner re-verifies the full
/// block and the result is broadcast over all `n_miners`.
pub fn dpos_latency(miner: &DeviceConfig, cc: &ConsensusConfig, n_miners: usize) -> f64 {
    cc.block_bytes / miner.downlink_bytes_per_s
        + cc.dpos_verify_cycles / cc.dpos_verify_budget_hz
        + cc.broadcast_coeff_s_per_byte * cc.block_bytes * cc.network_scale(n_miners)
        + cc.block_result_bytes / miner.uplink_bytes_per_s
}

/// Total bytes exchanged in one round.
///
/// PoR: each miner downloads its part, sends it to one peer and uploads the
/// result. DPoS: each miner downloads the block, receives it from every other
/// miner for re-verification and uploads the block result.
pub fn bandwidth_cost(scheme: Scheme, cc: &ConsensusConfig, n_miners: usize) -> f64 {
    let n = n_miners as f64;
    match scheme {
        Scheme::Por => n * (2.0 * cc.part_bytes + cc.result_bytes),
        Scheme::Dpos => n * (cc.block_bytes + (n - 1.0) * cc.block_bytes + cc.block_result_bytes),
    }
}
