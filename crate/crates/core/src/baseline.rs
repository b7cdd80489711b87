//! Heuristic joint policies used as comparison points.

use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::comms::{
    local_cost, offload_cost, offloading_utility, uplink_rate_with_gains, OffloadAction,
};
use crate::consensus::{mining_utility, por_latency};
use crate::env::{Env, EnvState};
use crate::error::{Error, Result};
use crate::madrl::{ActionHead, PolicySet};
use crate::scalar::Scalar;

/// Anything that maps an environment state to a joint action.
pub trait JointPolicy {
    fn act(
        &mut self,
        env: &Env,
        state: &EnvState,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<OffloadAction>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Everyone computes locally.
    AllLocal,
    /// Everyone offloads on a uniformly random sub-band.
    AllOffloadRandomChannel,
    /// The exploration distribution: uniform mode, uniform scalars.
    UniformRandom,
    /// Each device picks the mode with the best own reward as if it were
    /// alone on the air; ties between equally good sub-bands are broken
    /// uniformly at random.
    GreedyUtility,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::AllLocal,
        BaselineKind::AllOffloadRandomChannel,
        BaselineKind::UniformRandom,
        BaselineKind::GreedyUtility,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::AllLocal => "all-local",
            BaselineKind::AllOffloadRandomChannel => "all-offload-random-channel",
            BaselineKind::UniformRandom => "uniform-random",
            BaselineKind::GreedyUtility => "greedy-utility",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown baseline `{s}`")))
    }
}

/// Heuristic policies allocate full power, full local CPU and the full
/// verification budget; only the mode differs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind }
    }
}

fn full(env: &Env, n: usize, channel: Option<usize>) -> OffloadAction {
    let d = &env.scenario().devices[n];
    match channel {
        None => OffloadAction::local(d.cpu_budget_hz, d.verify_budget_cycles),
        Some(k) => {
            OffloadAction::offload(k, d.max_tx_power_w, d.cpu_budget_hz, d.verify_budget_cycles)
        }
    }
}

/// Own reward of device `n` for `action` with no other transmitter on the air.
pub fn solo_reward(env: &Env, state: &EnvState, n: usize, action: &OffloadAction) -> Result<f64> {
    let s = env.scenario();
    let dev = &s.devices[n];
    let task = &state.tasks[n];
    let local = local_cost(task, action, dev.energy_coeff);
    let off = match action.mode.channel() {
        None => {
            if local.exceeds_deadline(task) {
                -dev.weight_time
            } else {
                0.0
            }
        }
        Some(_) => {
            let mut solo: Vec<OffloadAction> = (0..s.num_devices())
                .map(|m| OffloadAction::local(s.devices[m].cpu_budget_hz, 1.0))
                .collect();
            solo[n] = *action;
            let rate = uplink_rate_with_gains(n, &solo, &s.channel_gains(), &s.radio)?;
            let chosen = offload_cost(task, rate, action.tx_power_w, s.edge_cpu_hz)?;
            if chosen.exceeds_deadline(task) {
                -dev.weight_time
            } else {
                offloading_utility(&local, &chosen, dev.weight_time, dev.weight_energy)
            }
        }
    };
    let mine = mining_utility(
        por_latency(dev, action.verify_cycles, &s.consensus),
        task.deadline_s,
    );
    Ok(off + mine)
}

impl JointPolicy for BaselinePolicy {
    fn act(
        &mut self,
        env: &Env,
        state: &EnvState,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<OffloadAction>> {
        let n = env.num_agents();
        let k = env.num_subbands();
        match self.kind {
            BaselineKind::AllLocal => Ok((0..n).map(|i| full(env, i, None)).collect()),
            BaselineKind::AllOffloadRandomChannel => Ok((0..n)
                .map(|i| full(env, i, Some(rng.gen_range(0..k))))
                .collect()),
            BaselineKind::UniformRandom => {
                let head = ActionHead::new(k);
                Ok((0..n)
                    .map(|i| head.decode(&head.random::<f64, _>(rng), &env.scenario().devices[i]))
                    .collect())
            }
            BaselineKind::GreedyUtility => (0..n)
                .map(|i| {
                    let local = full(env, i, None);
                    let mut best = (solo_reward(env, state, i, &local)?, vec![local]);
                    for ch in 0..k {
                        let a = full(env, i, Some(ch));
                        let r = solo_reward(env, state, i, &a)?;
                        if r > best.0 + 1e-12 {
                            best = (r, vec![a]);
                        } else if (r - best.0).abs() <= 1e-12 && best.1[0].mode.channel().is_some()
                        {
                            best.1.push(a);
                        }
                    }
                    let pick = rng.gen_range(0..best.1.len());
                    Ok(best.1[pick])
                })
                .collect(),
        }
    }
}

/// Trained actors acting greedily.
impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> JointPolicy for PolicySet<T> {
    fn act(
        &mut self,
        env: &Env,
        state: &EnvState,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<OffloadAction>> {
        PolicySet::act(self, env, state)
    }
}
