//! Channel-selection potential game.
//!
//! Player `n` picks `a_n` in `{0, 1..=K}` (0 = local execution). Local
//! players earn their mining utility. A player on sub-band `k` earns
//! `sum_{m != n, a_m = k} (J_n^off(k) + J_m^off(k)) + J_n^mine(k)`, with
//! offloading utilities precomputed as if each device were alone on its
//! sub-band. The game admits the exact potential
//!
//! ```text
//! Psi(a) = 1/2 sum_n sum_{m != n} (J_n^off + J_m^off) 1{a_m = a_n} 1{a_n >= 1}
//!        + sum_n J_n^mine(a_n)
//! ```
//!
//! so better-response dynamics terminate at a pure Nash equilibrium.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comms::{device_costs, OffloadAction};
use crate::consensus::{mining_utility, por_latency};
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::scalar::GameScalar;

/// Improvement a deviation must exceed to count as strict.
pub const IMPROVEMENT_EPS: f64 = 1e-12;
/// Default cap on the number of profiles an exhaustive check may visit.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;

pub type Profile = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameInstance<T> {
    num_channels: usize,
    /// `offload[n][a]`: offloading utility of `n` on action `a`; column 0 is zero.
    offload: Vec<Vec<T>>,
    /// `mining[n][a]`: mining utility of `n` under action `a`.
    mining: Vec<Vec<T>>,
}

/// How much verification work a device commits in each mode, as a fraction
/// of its budget, when building a game from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub local_verify_fraction: f64,
    pub offload_verify_fraction: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        // offloading frees the device CPU, so less of the budget is tied up
        Self {
            local_verify_fraction: 1.0,
            offload_verify_fraction: 0.5,
        }
    }
}

impl<T: GameScalar> GameInstance<T> {
    pub fn new(offload: Vec<Vec<T>>, mining: Vec<Vec<T>>) -> Result<Self> {
        let n = offload.len();
        if n == 0 || mining.len() != n {
            return Err(Error::Validation(
                "utility tables must be non-empty and of equal length".into(),
            ));
        }
        let width = offload[0].len();
        if width == 0 || offload.iter().chain(&mining).any(|row| row.len() != width) {
            return Err(Error::Validation(
                "every table row must have K+1 entries".into(),
            ));
        }
        if offload
            .iter()
            .chain(&mining)
            .flatten()
            .any(|v| v.to_f64().is_none_or(|f| !f.is_finite()))
        {
            return Err(Error::Validation("utility tables must be finite".into()));
        }
        let mut offload = offload;
        for row in &mut offload {
            row[0] = T::zero();
        }
        Ok(Self {
            num_channels: width - 1,
            offload,
            mining,
        })
    }

    /// Uniform random tables: offloading utilities in `[-1, 1]`, mining in
    /// `[0, e-1]`, mining mode-dependent but channel-independent.
    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Self {
        let offload = (0..n)
            .map(|_| {
                (0..=k)
                    .map(|a| {
                        if a == 0 {
                            0.0
                        } else {
                            rng.gen_range(-1.0..=1.0)
                        }
                    })
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>();
        let mining = (0..n)
            .map(|_| {
                let local = rng.gen_range(0.0..=std::f64::consts::E - 1.0);
                let off = rng.gen_range(0.0..=std::f64::consts::E - 1.0);
                (0..=k)
                    .map(|a| if a == 0 { local } else { off })
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>();
        let conv = |t: Vec<Vec<f64>>| -> Vec<Vec<T>> {
            t.into_iter()
                .map(|r| r.into_iter().map(T::from_f64_lossy).collect())
                .collect()
        };
        Self::new(conv(offload), conv(mining)).expect("random tables are well formed")
    }

    pub fn num_players(&self) -> usize {
        self.offload.len()
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn offload_table(&self) -> &[Vec<T>] {
        &self.offload
    }

    pub fn mining_table(&self) -> &[Vec<T>] {
        &self.mining
    }

    /// Multiplies every table entry by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let scale = |t: &Vec<Vec<T>>| -> Vec<Vec<T>> {
            t.iter()
                .map(|r| r.iter().map(|v| v.clone() * factor.clone()).collect())
                .collect()
        };
        Self {
            num_channels: self.num_channels,
            offload: scale(&self.offload),
            mining: scale(&self.mining),
        }
    }

    pub fn validate_profile(&self, profile: &[usize]) -> Result<()> {
        if profile.len() != self.num_players() {
            return Err(Error::Dimension {
                expected: self.num_players(),
                actual: profile.len(),
            });
        }
        if let Some(a) = profile.iter().find(|a| **a > self.num_channels) {
            return Err(Error::Validation(format!(
                "action {a} outside 0..={}",
                self.num_channels
            )));
        }
        Ok(())
    }

    /// Utility of player `n` under `profile`.
    pub fn utility(&self, n: usize, profile: &[usize]) -> T {
        let a = profile[n];
        if a == 0 {
            return self.mining[n][0].clone();
        }
        let mut u = self.mining[n][a].clone();
        for (m, &am) in profile.iter().enumerate() {
            if m != n && am == a {
                u = u + self.offload[n][a].clone() + self.offload[m][am].clone();
            }
        }
        u
    }

    pub fn potential(&self, profile: &[usize]) -> T {
        let two = T::one() + T::one();
        let mut pair = T::zero();
        let mut mine = T::zero();
        for (n, &an) in profile.iter().enumerate() {
            mine = mine + self.mining[n][an].clone();
            if an == 0 {
                continue;
            }
            for (m, &am) in profile.iter().enumerate() {
                if m != n && am == an {
                    pair = pair + self.offload[n][an].clone() + self.offload[m][am].clone();
                }
            }
        }
        pair / two + mine
    }

    /// Best action of `n` against the rest of `profile`; ties go to the
    /// smaller action index.
    pub fn best_response(&self, n: usize, profile: &[usize]) -> (usize, T) {
        let mut trial = profile.to_vec();
        trial[n] = 0;
        let mut best = (0, self.utility(n, &trial));
        for a in 1..=self.num_channels {
            trial[n] = a;
            let u = self.utility(n, &trial);
            if u > best.1 {
                best = (a, u);
            }
        }
        best
    }

    pub fn num_profiles(&self) -> u128 {
        ((self.num_channels + 1) as u128).saturating_pow(self.num_players() as u32)
    }

    /// Profile number `index` in mixed-radix order (player 0 least significant).
    pub fn profile_at(&self, mut index: u128) -> Profile {
        let base = (self.num_channels + 1) as u128;
        (0..self.num_players())
            .map(|_| {
                let d = (index % base) as usize;
                index /= base;
                d
            })
            .collect()
    }

    /// Checks `Psi(a'_n, a_-n) - Psi(a) == J_n(a'_n, a_-n) - J_n(a)` over every
    /// profile and unilateral deviation.
    pub fn verify_exact_potential(&self, tolerance: T, budget: u128) -> Result<PotentialReport<T>> {
        let total = self.num_profiles();
        if total > budget {
            return Err(Error::BudgetExceeded {
                profiles: total,
                budget,
            });
        }
        let k = self.num_channels;
        let zero = T::zero();
        let max_discrepancy = (0..total as u64)
            .into_par_iter()
            .map(|idx| {
                let mut profile = self.profile_at(idx as u128);
                let psi = self.potential(&profile);
                let mut worst = T::zero();
                for n in 0..profile.len() {
                    let own = profile[n];
                    let j = self.utility(n, &profile);
                    for dev in 0..=k {
                        if dev == own {
                            continue;
                        }
                        profile[n] = dev;
                        let d_psi = self.potential(&profile) - psi.clone();
                        let d_j = self.utility(n, &profile) - j.clone();
                        let gap = d_psi.abs_diff(&d_j);
                        if gap > worst {
                            worst = gap;
                        }
                    }
                    profile[n] = own;
                }
                worst
            })
            .reduce(|| zero.clone(), |a, b| if b > a { b } else { a });
        let deviations = total * (self.num_players() as u128) * (k as u128);
        Ok(PotentialReport {
            holds: max_discrepancy <= tolerance,
            max_discrepancy,
            profiles_checked: total,
            deviations_checked: deviations,
        })
    }

    /// True when no player can gain more than `IMPROVEMENT_EPS` by deviating.
    pub fn is_nash(&self, profile: &[usize]) -> bool {
        let eps = T::from_f64_lossy(IMPROVEMENT_EPS);
        let mut trial = profile.to_vec();
        for n in 0..profile.len() {
            let current = self.utility(n, profile);
            for a in 0..=self.num_channels {
                trial[n] = a;
                if self.utility(n, &trial) > current.clone() + eps.clone() {
                    return false;
                }
            }
            trial[n] = profile[n];
        }
        true
    }

    /// Asynchronous best-response dynamics from `start`. Players move in index
    /// order; a move is taken only when it improves by more than
    /// `IMPROVEMENT_EPS`. Stops after a pass with no move.
    pub fn solve_nash(&self, start: &[usize], max_iters: usize) -> Result<NashCertificate<T>> {
        self.validate_profile(start)?;
        let eps = T::from_f64_lossy(IMPROVEMENT_EPS);
        let mut profile = start.to_vec();
        let mut trajectory = vec![profile.clone()];
        let mut steps = 0;
        for _ in 0..max_iters {
            let mut moved = false;
            for n in 0..profile.len() {
                let current = self.utility(n, &profile);
                let (a, u) = self.best_response(n, &profile);
                if a != profile[n] && u > current + eps.clone() {
                    profile[n] = a;
                    steps += 1;
                    moved = true;
                    trajectory.push(profile.clone());
                }
            }
            if !moved {
                let verified = self.is_nash(&profile);
                let utilities = (0..profile.len())
                    .map(|n| self.utility(n, &profile))
                    .collect();
                let potential = self.potential(&profile);
                return Ok(NashCertificate {
                    profile,
                    improvement_path_length: steps,
                    verified,
                    utilities,
                    potential,
                });
            }
        }
        Err(Error::NoConvergence {
            max_iters,
            trajectory,
        })
    }

    /// Stable digest of the tables.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_players() as u64).to_be_bytes());
        h.update((self.num_channels as u64).to_be_bytes());
        for v in self.offload.iter().chain(&self.mining).flatten() {
            h.update(v.to_f64().unwrap_or(f64::NAN).to_bits().to_be_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl GameInstance<f64> {
    /// Tables from a scenario: each device offloads at full power and full
    /// local CPU as if alone on its sub-band, and mining latency uses the
    /// per-mode verification fraction.
    pub fn from_scenario(scenario: &Scenario, config: &GameConfig) -> Result<Self> {
        let n = scenario.num_devices();
        let k = scenario.num_subbands();
        let mut offload = vec![vec![0.0; k + 1]; n];
        let mut mining = vec![vec![0.0; k + 1]; n];
        for i in 0..n {
            let dev = &scenario.devices[i];
            for a in 0..=k {
                let frac = if a == 0 {
                    config.local_verify_fraction
                } else {
                    config.offload_verify_fraction
                };
                let phi = frac * dev.verify_budget_cycles;
                mining[i][a] = mining_utility(
                    por_latency(dev, phi, &scenario.consensus),
                    scenario.tasks[i].deadline_s,
                );
                if a == 0 {
                    continue;
                }
                // everyone else local: no cross-interference
                let mut acts: Vec<OffloadAction> = scenario
                    .devices
                    .iter()
                    .map(|d| OffloadAction::local(d.cpu_budget_hz, phi))
                    .collect();
                acts[i] = OffloadAction::offload(a - 1, dev.max_tx_power_w, dev.cpu_budget_hz, phi);
                offload[i][a] = device_costs(&acts, scenario)?[i].utility;
            }
        }
        Self::new(offload, mining)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport<T> {
    pub holds: bool,
    pub max_discrepancy: T,
    pub profiles_checked: u128,
    pub deviations_checked: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashCertificate<T> {
    pub profile: Profile,
    pub improvement_path_length: usize,
    /// No unilateral deviation improves any player.
    pub verified: bool,
    pub utilities: Vec<T>,
    pub potential: T,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_scenario, GeneratorParams};
    use crate::Rational;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(n: usize, k: usize, seed: u64) -> GameInstance<f64> {
        GameInstance::random(n, k, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn local_player_gets_mining_only() {
        let g = inst(3, 2, 0);
        assert_eq!(g.utility(1, &[2, 0, 1]), g.mining_table()[1][0]);
    }

    #[test]
    fn lone_offloader_gets_mining_only() {
        let g = inst(3, 2, 1);
        assert_eq!(g.utility(0, &[1, 2, 0]), g.mining_table()[0][1]);
    }

    #[test]
    fn three_on_one_channel_hand_expansion() {
        let g = inst(3, 1, 2);
        let o = g.offload_table();
        let m = g.mining_table();
        let p = [1, 1, 1];
        let expected0 = (o[0][1] + o[1][1]) + (o[0][1] + o[2][1]) + m[0][1];
        let expected1 = (o[1][1] + o[0][1]) + (o[1][1] + o[2][1]) + m[1][1];
        assert!((g.utility(0, &p) - expected0).abs() < 1e-15);
        assert!((g.utility(1, &p) - expected1).abs() < 1e-15);
    }

    #[test]
    fn potential_special_cases() {
        let g = inst(4, 2, 3);
        let all_local: f64 = (0..4).map(|n| g.mining_table()[n][0]).sum();
        assert!((g.potential(&[0, 0, 0, 0]) - all_local).abs() < 1e-15);
        let one = inst(1, 3, 4);
        assert_eq!(one.potential(&[2]), one.mining_table()[0][2]);
    }

    #[test]
    fn exact_potential_holds_on_random_instances() {
        for seed in 0..10 {
            let r = inst(3, 2, seed)
                .verify_exact_potential(1e-9, DEFAULT_ENUMERATION_BUDGET)
                .unwrap();
            assert!(r.holds, "{r:?}");
            assert_eq!(r.profiles_checked, 27);
        }
        let single = inst(1, 3, 0).verify_exact_potential(1e-9, 10).unwrap();
        assert!(single.holds);
    }

    #[test]
    fn exact_potential_is_exact_in_rationals() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let table = |rng: &mut ChaCha8Rng| -> Vec<Vec<Rational>> {
            (0..4)
                .map(|_| {
                    (0..3)
                        .map(|_| Rational::new(rng.gen_range(-50..50), rng.gen_range(1..13)))
                        .collect()
                })
                .collect()
        };
        let g = GameInstance::new(table(&mut rng), table(&mut rng)).unwrap();
        let r = g
            .verify_exact_potential(Rational::from_integer(0), 1000)
            .unwrap();
        assert!(r.holds);
        assert_eq!(r.max_discrepancy, Rational::from_integer(0));
    }

    #[test]
    fn broken_structure_is_detected() {
        // player-specific pair terms break the symmetric pair structure
        #[derive(Clone)]
        struct Perturbed(GameInstance<f64>);
        let g = Perturbed(inst(3, 2, 5));
        let util = |n: usize, p: &[usize]| {
            g.0.utility(n, p)
                + if n == 0 && p[0] == p[1] && p[0] > 0 {
                    0.3
                } else {
                    0.0
                }
        };
        let mut worst: f64 = 0.0;
        for idx in 0..g.0.num_profiles() {
            let mut p = g.0.profile_at(idx);
            for n in 0..3 {
                let own = p[n];
                let (psi, j) = (g.0.potential(&p), util(n, &p));
                for a in 0..=2 {
                    p[n] = a;
                    worst = worst.max(((g.0.potential(&p) - psi) - (util(n, &p) - j)).abs());
                }
                p[n] = own;
            }
        }
        assert!(worst > 0.1);
    }

    #[test]
    fn budget_is_enforced() {
        let g = inst(8, 3, 0);
        assert!(matches!(
            g.verify_exact_potential(1e-9, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn no_channels_means_local() {
        let g = inst(3, 0, 1);
        assert_eq!(g.best_response(1, &[0, 0, 0]).0, 0);
    }

    #[test]
    fn dominant_channel_is_chosen() {
        let mut g = inst(3, 3, 6);
        for a in 0..=3 {
            g.mining[0][a] = if a == 2 { 100.0 } else { 0.0 };
        }
        for idx in 0..g.num_profiles() {
            let p = g.profile_at(idx);
            let (a, u) = g.best_response(0, &p);
            assert_eq!(a, 2);
            let mut q = p.clone();
            q[0] = a;
            assert_eq!(u, g.utility(0, &q));
        }
    }

    #[test]
    fn start_at_equilibrium_takes_no_steps() {
        let g = inst(4, 2, 7);
        let first = g.solve_nash(&[0, 0, 0, 0], 100).unwrap();
        let again = g.solve_nash(&first.profile, 100).unwrap();
        assert_eq!(again.improvement_path_length, 0);
        assert!(again.verified);
    }

    #[test]
    fn invalid_start_is_rejected() {
        let g = inst(2, 1, 0);
        assert!(g.solve_nash(&[0, 5], 10).is_err());
        assert!(g.solve_nash(&[0], 10).is_err());
    }

    #[test]
    fn scenario_tables_are_channel_independent() {
        let s = generate_scenario(&GeneratorParams::sample(4, 3, 2)).unwrap();
        let g = GameInstance::from_scenario(&s, &GameConfig::default()).unwrap();
        for row in g.offload_table() {
            assert!(row[1..].windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        }
        assert!(
            g.verify_exact_potential(1e-9, DEFAULT_ENUMERATION_BUDGET)
                .unwrap()
                .holds
        );
    }
}
