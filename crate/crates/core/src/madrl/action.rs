use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::comms::{OffloadAction, OffloadMode};
use crate::model::DeviceConfig;
use crate::scalar::Scalar;

/// Maps raw actor outputs to the hybrid offloading action.
///
/// The raw vector has `K + 1` preference logits followed by three scalar
/// logits (power, local CPU, verification CPU). Preferences pass through
/// `tanh`, scalars through the logistic sigmoid (unit slope). The squashed
/// vector is what the critic sees. Decoding takes the argmax preference
/// (index 0 = local, ties to the lowest index) and scales each scalar `s` to
/// `budget * (floor + (1 - floor) * s)`, which always lies in `(0, budget]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionHead {
    pub num_channels: usize,
    pub floor: f64,
}

pub const NUM_SCALARS: usize = 3;
pub const DEFAULT_FLOOR: f64 = 1e-3;

impl ActionHead {
    pub fn new(num_channels: usize) -> Self {
        Self {
            num_channels,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn num_modes(&self) -> usize {
        self.num_channels + 1
    }

    pub fn dim(&self) -> usize {
        self.num_modes() + NUM_SCALARS
    }

    /// Row-wise squashing of raw outputs.
    pub fn squash<T: Scalar>(&self, raw: ArrayView2<T>) -> Array2<T> {
        let modes = self.num_modes();
        let mut out = raw.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j < modes { v.tanh() } else { sigmoid(*v) };
            }
        }
        out
    }

    /// Chain rule through [`ActionHead::squash`]: maps dL/d(squashed) to dL/d(raw),
    /// given the squashed values.
    pub fn squash_backward<T: Scalar>(
        &self,
        squashed: ArrayView2<T>,
        upstream: ArrayView2<T>,
    ) -> Array2<T> {
        let modes = self.num_modes();
        let mut out = upstream.to_owned();
        for (mut g_row, s_row) in out.rows_mut().into_iter().zip(squashed.rows()) {
            Zip::indexed(&mut g_row).and(&s_row).for_each(|j, g, &s| {
                let d = if j < modes {
                    T::one() - s * s
                } else {
                    s * (T::one() - s)
                };
                *g *= d;
            });
        }
        out
    }

    pub fn mode_of<T: Scalar>(&self, squashed: &[T]) -> OffloadMode {
        let mut best = 0;
        for j in 1..self.num_modes() {
            if squashed[j] > squashed[best] {
                best = j;
            }
        }
        OffloadMode::from_index(best)
    }

    pub fn decode<T: Scalar>(&self, squashed: &[T], dev: &DeviceConfig) -> OffloadAction {
        let m = self.num_modes();
        let scale = |s: T, budget: f64| {
            budget * (self.floor + (1.0 - self.floor) * s.to_f64_lossy().clamp(0.0, 1.0))
        };
        OffloadAction {
            mode: self.mode_of(squashed),
            tx_power_w: scale(squashed[m], dev.max_tx_power_w),
            local_cpu_hz: scale(squashed[m + 1], dev.cpu_budget_hz),
            verify_cycles: scale(squashed[m + 2], dev.verify_budget_cycles),
        }
    }

    /// Uniform exploration action in squashed space: the chosen mode's
    /// preference is 1 and the rest -1; scalars are `U(0, 1)`.
    pub fn random<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let m = self.num_modes();
        let pick = rng.gen_range(0..m);
        let mut v: Vec<T> = (0..m)
            .map(|j| if j == pick { T::one() } else { -T::one() })
            .collect();
        v.extend((0..NUM_SCALARS).map(|_| T::lit(rng.gen::<f64>())));
        v
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn squash_ranges() {
        let h = ActionHead::new(2);
        let s = h.squash(array![[50.0, -50.0, 0.0, 80.0, -80.0, 0.0]].view());
        assert_eq!(s[[0, 0]], 1.0);
        assert_eq!(s[[0, 1]], -1.0);
        assert_eq!(s[[0, 5]], 0.5);
        assert!(s[[0, 4]] >= 0.0 && s[[0, 3]] <= 1.0);
    }

    #[test]
    fn squash_backward_matches_finite_differences() {
        let h = ActionHead::new(1);
        let raw: Array2<f64> = array![[0.3, -0.7, 1.2, -0.4, 0.05]];
        let s = h.squash(raw.view());
        let g = h.squash_backward(s.view(), Array2::ones((1, 5)).view());
        for j in 0..5 {
            let mut p = raw.clone();
            let mut q = raw.clone();
            p[[0, j]] += 1e-6;
            q[[0, j]] -= 1e-6;
            let fd = (h.squash(p.view())[[0, j]] - h.squash(q.view())[[0, j]]) / 2e-6;
            assert!((fd - g[[0, j]]).abs() < 1e-8);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let h = ActionHead::new(3);
        assert_eq!(
            h.mode_of(&[0.5, 0.5, 0.2, 0.5, 0.0, 0.0, 0.0]),
            OffloadMode::Local
        );
        assert_eq!(
            h.mode_of(&[0.1, 0.5, 0.2, 0.5, 0.0, 0.0, 0.0]),
            OffloadMode::Offload { channel: 0 }
        );
    }
}
