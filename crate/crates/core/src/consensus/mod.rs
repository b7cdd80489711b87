//! Reputation-based miner selection and lightweight block verification.
//!
//! Miners are ranked by mining utility and the top `m` rotate as block
//! manager. In a round the block is split into one part per miner, each part
//! carries a random number from a permutation of `1..=N`, and each part is
//! checked once by a random peer. The block is accepted only when the sum of
//! the numbers of verified parts equals `N(N+1)/2` and at least 51% of the
//! miners report success.

mod latency;
mod round;
mod selection;

pub use latency::{bandwidth_cost, dpos_latency, mining_utility, por_latency, Scheme};
pub use round::{
    expected_sum, run_por_round, synthetic_block, BlockPart, Chain, ChainBlock, ConsensusOutcome,
    PartField, PorRound, Verification,
};
pub use selection::{select_miners, MinerSelection, MinerState};
