use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerState {
    pub device_index: usize,
    /// Mining utility used as reputation score.
    pub reputation: f64,
    pub is_manager: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerSelection {
    /// Selected miners, highest reputation first.
    pub miners: Vec<MinerState>,
    /// Position of the manager in `miners`.
    pub manager: usize,
}

impl MinerSelection {
    pub fn manager_device(&self) -> usize {
        self.miners[self.manager].device_index
    }

    pub fn device_indices(&self) -> Vec<usize> {
        self.miners.iter().map(|m| m.device_index).collect()
    }
}

/// Picks the `m` devices with the highest reputation (ties to the lower
/// index). The manager role rotates over the selected miners with `round`.
pub fn select_miners(reputations: &[f64], m: usize, round: u64) -> Result<MinerSelection> {
    let n = reputations.len();
    if m == 0 || m > n {
        return Err(Error::Domain(format!(
            "cannot select {m} miners from {n} devices"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| reputations[b].total_cmp(&reputations[a]).then(a.cmp(&b)));
    order.truncate(m);
    let manager = (round % m as u64) as usize;
    let miners = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| MinerState {
            device_index: i,
            reputation: reputations[i].max(0.0),
            is_manager: pos == manager,
        })
        .collect();
    Ok(MinerSelection { miners, manager })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_two_by_reputation() {
        let sel = select_miners(&[3.0, 1.0, 2.0], 2, 0).unwrap();
        // sort oracle
        let mut idx = vec![0usize, 1, 2];
        idx.sort_by(|a, b| {
            [3.0, 1.0, 2.0][*b]
                .partial_cmp(&[3.0, 1.0, 2.0][*a])
                .unwrap()
        });
        assert_eq!(sel.device_indices(), idx[..2].to_vec());
        assert_eq!(sel.manager_device(), 0);
        assert_eq!(sel.miners.iter().filter(|m| m.is_manager).count(), 1);
    }

    #[test]
    fn ties_break_by_index() {
        let sel = select_miners(&[1.0; 4], 2, 0).unwrap();
        assert_eq!(sel.device_indices(), vec![0, 1]);
    }

    #[test]
    fn manager_rotates() {
        let sel = select_miners(&[3.0, 1.0, 2.0], 2, 1).unwrap();
        assert_eq!(sel.manager_device(), 2);
        let sel = select_miners(&[3.0, 1.0, 2.0], 2, 2).unwrap();
        assert_eq!(sel.manager_device(), 0);
    }

    #[test]
    fn too_many_miners_is_an_error() {
        assert!(matches!(
            select_miners(&[1.0, 2.0], 3, 0),
            Err(Error::Domain(_))
        ));
    }
}
