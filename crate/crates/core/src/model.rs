//! Scenario description: devices, radio, tasks, consensus parameters.
//!
//! All quantities are SI and the unit is spelled out in every serialized field
//! name. Scenarios are loaded from JSON, produced by [`generate_scenario`], or
//! assembled from a CSV position/task trace with [`scenario_from_trace`].

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path-loss intercept in dB at 1 km.
pub const PATHLOSS_INTERCEPT_DB: f64 = 140.7;
/// Path-loss slope in dB per decade of distance.
pub const PATHLOSS_SLOPE_DB: f64 = 36.7;
/// Smallest device-to-base-station distance fed to the path-loss model.
pub const MIN_DISTANCE_KM: f64 = 0.001;
/// Chip energy coefficient used when a scenario does not set one.
pub const DEFAULT_ENERGY_COEFF: f64 = 1e-27;

const WEIGHT_TOLERANCE: f64 = 1e-9;

fn default_intercept() -> f64 {
    PATHLOSS_INTERCEPT_DB
}
fn default_slope() -> f64 {
    PATHLOSS_SLOPE_DB
}
fn default_min_distance() -> f64 {
    MIN_DISTANCE_KM
}
fn default_energy_coeff() -> f64 {
    DEFAULT_ENERGY_COEFF
}
fn default_scale_exponent() -> f64 {
    1.0
}

/// One device's computation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub cycles: f64,
    pub input_bytes: f64,
    pub deadline_s: f64,
}

impl Task {
    pub fn input_bits(&self) -> f64 {
        self.input_bytes * 8.0
    }

    pub fn validate(&self, at: &str) -> Result<()> {
        positive(self.cycles, &format!("{at}.cycles"))?;
        positive(self.input_bytes, &format!("{at}.input_bytes"))?;
        positive(self.deadline_s, &format!("{at}.deadline_s"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub num_subbands: usize,
    pub subband_hz: f64,
    pub noise_power_w: f64,
    #[serde(default = "default_intercept")]
    pub pathloss_intercept_db: f64,
    #[serde(default = "default_slope")]
    pub pathloss_slope_db: f64,
    #[serde(default = "default_min_distance")]
    pub min_distance_km: f64,
}

impl RadioConfig {
    /// Splits a total band of `total_hz` into `num_subbands` equal sub-bands.
    pub fn from_total_band(num_subbands: usize, total_hz: f64, noise_power_w: f64) -> Self {
        Self {
            num_subbands,
            subband_hz: total_hz / num_subbands.max(1) as f64,
            noise_power_w,
            pathloss_intercept_db: PATHLOSS_INTERCEPT_DB,
            pathloss_slope_db: PATHLOSS_SLOPE_DB,
            min_distance_km: MIN_DISTANCE_KM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subbands < 1 {
            return Err(Error::Validation("radio.num_subbands must be >= 1".into()));
        }
        positive(self.subband_hz, "radio.subband_hz")?;
        positive(self.noise_power_w, "radio.noise_power_w")?;
        positive(self.min_distance_km, "radio.min_distance_km")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub position_km: [f64; 2],
    /// Transmit power budget, identical on every sub-band.
    pub max_tx_power_w: f64,
    /// Local computing capacity available to the task.
    pub cpu_budget_hz: f64,
    /// Upper bound on the CPU cycles the device commits to block verification.
    pub verify_budget_cycles: f64,
    #[serde(default = "default_energy_coeff")]
    pub energy_coeff: f64,
    pub weight_time: f64,
    pub weight_energy: f64,
    /// Miner to block-manager rate.
    pub uplink_bytes_per_s: f64,
    /// Block-manager to miner rate.
    pub downlink_bytes_per_s: f64,
}

impl DeviceConfig {
    pub fn distance_km(&self) -> f64 {
        self.position_km[0].hypot(self.position_km[1])
    }

    pub fn validate(&self, at: &str) -> Result<()> {
        positive(self.max_tx_power_w, &format!("{at}.max_tx_power_w"))?;
        positive(self.cpu_budget_hz, &format!("{at}.cpu_budget_hz"))?;
        positive(
            self.verify_budget_cycles,
            &format!("{at}.verify_budget_cycles"),
        )?;
        positive(self.energy_coeff, &format!("{at}.energy_coeff"))?;
        positive(self.uplink_bytes_per_s, &format!("{at}.uplink_bytes_per_s"))?;
        positive(
            self.downlink_bytes_per_s,
            &format!("{at}.downlink_bytes_per_s"),
        )?;
        for (name, w) in [
            ("weight_time", self.weight_time),
            ("weight_energy", self.weight_energy),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!(
                    "{at}.{name} must lie in [0, 1], got {w}"
                )));
            }
        }
        if (self.weight_time + self.weight_energy - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::Validation(format!(
                "{at}: weights must sum to 1 (weight_time {} + weight_energy {})",
                self.weight_time, self.weight_energy
            )));
        }
        if !self.position_km.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation(format!(
                "{at}.position_km must be finite"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    /// Size of the block part each miner verifies.
    pub part_bytes: f64,
    /// Size of the verification result for one part.
    pub result_bytes: f64,
    pub block_bytes: f64,
    pub block_result_bytes: f64,
    /// Broadcast time per byte per unit of network scale.
    pub broadcast_coeff_s_per_byte: f64,
    /// CPU cycles needed to verify the full block under DPoS.
    pub dpos_verify_cycles: f64,
    pub dpos_verify_budget_hz: f64,
    pub tx_per_block: usize,
    pub num_miners: usize,
    /// Network scale of a message seen by `x` miners is `x^scale_exponent`.
    #[serde(default = "default_scale_exponent")]
    pub scale_exponent: f64,
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<()> {
        positive(self.part_bytes, "consensus.part_bytes")?;
        positive(self.result_bytes, "consensus.result_bytes")?;
        positive(self.block_bytes, "consensus.block_bytes")?;
        positive(self.block_result_bytes, "consensus.block_result_bytes")?;
        positive(self.dpos_verify_cycles, "consensus.dpos_verify_cycles")?;
        positive(
            self.dpos_verify_budget_hz,
            "consensus.dpos_verify_budget_hz",
        )?;
        if self.part_bytes > self.block_bytes {
            return Err(Error::Validation(
                "consensus.part_bytes must not exceed block_bytes".into(),
            ));
        }
        if !(self.broadcast_coeff_s_per_byte >= 0.0) {
            return Err(Error::Validation(
                "consensus.broadcast_coeff_s_per_byte must be >= 0".into(),
            ));
        }
        if self.tx_per_block == 0 {
            return Err(Error::Validation(
                "consensus.tx_per_block must be >= 1".into(),
            ));
        }
        if self.num_miners == 0 {
            return Err(Error::Validation(
                "consensus.num_miners must be >= 1".into(),
            ));
        }
        positive(self.scale_exponent, "consensus.scale_exponent")
    }

    /// Network scale `|L^x|` of a message handled by `miners` miners.
    pub fn network_scale(&self, miners: usize) -> f64 {
        (miners as f64).powf(self.scale_exponent)
    }

    /// Copy with the block split evenly over `n` miners: part and result
    /// sizes become `block/n` and `block_result/n`.
    pub fn split_evenly(&self, n: usize) -> Self {
        let n = n.max(1) as f64;
        Self {
            part_bytes: self.block_bytes / n,
            result_bytes: self.block_result_bytes / n,
            ..self.clone()
        }
    }
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.min + (self.max - self.min) * rng.gen::<f64>()
    }

    fn validate(&self, at: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::Validation(format!(
                "{at}: empty range [{}, {}]",
                self.min, self.max
            )));
        }
        positive(self.min, &format!("{at}.min"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRanges {
    pub input_bytes: Range,
    pub cycles: Range,
    pub deadline_s: Range,
}

impl TaskRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Task {
        Task {
            input_bytes: self.input_bytes.sample(rng),
            cycles: self.cycles.sample(rng),
            deadline_s: self.deadline_s.sample(rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.input_bytes.validate("task_ranges.input_bytes")?;
        self.cycles.validate("task_ranges.cycles")?;
        self.deadline_s.validate("task_ranges.deadline_s")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub radio: RadioConfig,
    pub devices: Vec<DeviceConfig>,
    pub tasks: Vec<Task>,
    pub edge_cpu_hz: f64,
    pub consensus: ConsensusConfig,
    /// When present, episodes redraw tasks from these ranges on reset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_ranges: Option<TaskRanges>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn num_subbands(&self) -> usize {
        self.radio.num_subbands
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        if self.devices.is_empty() {
            return Err(Error::Validation(
                "scenario must contain at least one device".into(),
            ));
        }
        if self.tasks.len() != self.devices.len() {
            return Err(Error::Validation(format!(
                "tasks length {} must equal devices length {}",
                self.tasks.len(),
                self.devices.len()
            )));
        }
        for (i, d) in self.devices.iter().enumerate() {
            d.validate(&format!("devices[{i}]"))?;
        }
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate(&format!("tasks[{i}]"))?;
        }
        positive(self.edge_cpu_hz, "edge_cpu_hz")?;
        self.consensus.validate()?;
        if let Some(r) = &self.task_ranges {
            r.validate()?;
        }
        Ok(())
    }

    /// Parses and validates a scenario from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
                path: e.path().to_string(),
                message: e.into_inner().to_string(),
            })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Gains of every device, in device order.
    pub fn channel_gains(&self) -> Vec<f64> {
        self.devices
            .iter()
            .map(|d| channel_gain(d, &self.radio))
            .collect()
    }
}

/// Reads a scenario JSON document from disk.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json_str(&text)
}

/// Path loss in dB at `distance_km`, after clamping to the radio's minimum distance.
pub fn path_loss_db(distance_km: f64, radio: &RadioConfig) -> f64 {
    let d = distance_km.max(radio.min_distance_km);
    radio.pathloss_intercept_db + radio.pathloss_slope_db * d.log10()
}

/// Linear uplink gain of a device to the base station at the origin.
pub fn channel_gain(device: &DeviceConfig, radio: &RadioConfig) -> f64 {
    10f64.powf(-path_loss_db(device.distance_km(), radio) / 10.0)
}

/// Parameters for synthetic scenario generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub n_devices: usize,
    pub template: DeviceConfig,
    pub radius_km: f64,
    pub task_ranges: TaskRanges,
    pub radio: RadioConfig,
    pub edge_cpu_hz: f64,
    pub consensus: ConsensusConfig,
    /// Keep the ranges in the scenario so environments redraw tasks per episode.
    #[serde(default = "default_true")]
    pub redraw_tasks: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl GeneratorParams {
    /// Declared sample configuration. These are illustrative defaults for an
    /// urban macro cell, not measured values.
    pub fn sample(n_devices: usize, num_subbands: usize, seed: u64) -> Self {
        let total_band_hz = 20e6;
        let subband_hz = total_band_hz / num_subbands as f64;
        // thermal noise at -174 dBm/Hz over one sub-band
        let noise_w = 10f64.powf((-174.0 - 30.0) / 10.0) * subband_hz;
        let block_bytes = 50_000.0;
        let miners = n_devices.max(2);
        Self {
            n_devices,
            template: DeviceConfig {
                position_km: [0.0, 0.0],
                max_tx_power_w: 0.2,
                cpu_budget_hz: 1e9,
                verify_budget_cycles: 5e7,
                energy_coeff: DEFAULT_ENERGY_COEFF,
                weight_time: 0.5,
                weight_energy: 0.5,
                uplink_bytes_per_s: 2.5e6,
                downlink_bytes_per_s: 5e6,
            },
            radius_km: 0.3,
            task_ranges: TaskRanges {
                input_bytes: Range::new(1e6, 3.5e6),
                cycles: Range::new(5e8, 1.5e9),
                deadline_s: Range::new(1.5, 2.5),
            },
            radio: RadioConfig {
                noise_power_w: noise_w,
                ..RadioConfig::from_total_band(num_subbands, total_band_hz, noise_w)
            },
            edge_cpu_hz: 2e10,
            consensus: ConsensusConfig {
                part_bytes: block_bytes / miners as f64,
                result_bytes: 2_000.0 / miners as f64,
                block_bytes,
                block_result_bytes: 2_000.0,
                broadcast_coeff_s_per_byte: 1e-7,
                dpos_verify_cycles: 1e8,
                dpos_verify_budget_hz: 1e9,
                tx_per_block: 10,
                num_miners: n_devices,
                scale_exponent: 1.0,
            },
            redraw_tasks: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices < 1 {
            return Err(Error::Validation("n_devices must be >= 1".into()));
        }
        if !(self.radius_km > 0.0) {
            return Err(Error::Validation(format!(
                "radius_km must be > 0, got {}",
                self.radius_km
            )));
        }
        self.task_ranges.validate()?;
        self.radio.validate()?;
        self.consensus.validate()
    }
}

/// Places `n_devices` uniformly in a disc around the base station and draws
/// one task per device. Pure function of `params`.
pub fn generate_scenario(params: &GeneratorParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut devices = Vec::with_capacity(params.n_devices);
    let mut tasks = Vec::with_capacity(params.n_devices);
    for _ in 0..params.n_devices {
        let r = params.radius_km * rng.gen::<f64>().sqrt();
        let theta = 2.0 * PI * rng.gen::<f64>();
        devices.push(DeviceConfig {
            position_km: [r * theta.cos(), r * theta.sin()],
            ..params.template.clone()
        });
        tasks.push(params.task_ranges.sample(&mut rng));
    }
    let scenario = Scenario {
        radio: params.radio.clone(),
        devices,
        tasks,
        edge_cpu_hz: params.edge_cpu_hz,
        consensus: params.consensus.clone(),
        task_ranges: params.redraw_tasks.then_some(params.task_ranges),
        seed: params.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    device_id: usize,
    x_km: f64,
    y_km: f64,
    task_bytes: f64,
    task_cycles: f64,
    deadline_s: f64,
}

/// Builds a scenario from a CSV trace with columns
/// `device_id,x_km,y_km,task_bytes,task_cycles,deadline_s`. Devices are
/// ordered by `device_id`; non-positional device fields come from the template.
pub fn scenario_from_trace(path: impl AsRef<Path>, base: &GeneratorParams) -> Result<Scenario> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<TraceRow> = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        let row: TraceRow = rec.map_err(|e| Error::Schema {
            path: format!("row {}", i + 1),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    rows.sort_by_key(|r| r.device_id);
    if rows.windows(2).any(|w| w[0].device_id == w[1].device_id) {
        return Err(Error::Validation(
            "trace contains duplicate device_id".into(),
        ));
    }
    let devices = rows
        .iter()
        .map(|r| DeviceConfig {
            position_km: [r.x_km, r.y_km],
            ..base.template.clone()
        })
        .collect();
    let tasks = rows
        .iter()
        .map(|r| Task {
            cycles: r.task_cycles,
            input_bytes: r.task_bytes,
            deadline_s: r.deadline_s,
        })
        .collect();
    let scenario = Scenario {
        radio: base.radio.clone(),
        devices,
        tasks,
        edge_cpu_hz: base.edge_cpu_hz,
        consensus: base.consensus.clone(),
        task_ranges: None,
        seed: base.seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}
