use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::latency::{bandwidth_cost, por_latency, Scheme};
use super::selection::MinerState;
use crate::error::{Error, Result};
use crate::model::{ConsensusConfig, Scenario};

pub type Hash = [u8; 32];

fn sha256(parts: &[&[u8]]) -> Hash {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn sign(content_hash: &Hash, public_key: &Hash, timestamp: u64) -> Hash {
    sha256(&[content_hash, public_key, &timestamp.to_be_bytes()])
}

/// `N(N+1)/2`, the sum of a permutation of `1..=N`.
pub fn expected_sum(n: usize) -> u64 {
    let n = n as u64;
    n * (n + 1) / 2
}

/// One miner's share of the block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPart {
    /// 1-based part index.
    pub index: usize,
    pub content: Vec<u8>,
    pub content_hash: Hash,
    pub assigned_number: u64,
    pub public_key: Hash,
    pub timestamp: u64,
    pub signature: Hash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartField {
    Content,
    Signature,
    PublicKey,
}

impl BlockPart {
    pub fn content_bytes(&self) -> usize {
        self.content.len()
    }

    /// Flips one bit of the chosen field. `bit` wraps around the field length.
    pub fn flip_bit(&mut self, field: PartField, bit: usize) {
        let bytes: &mut [u8] = match field {
            PartField::Content => &mut self.content,
            PartField::Signature => &mut self.signature,
            PartField::PublicKey => &mut self.public_key,
        };
        if bytes.is_empty() {
            return;
        }
        let bit = bit % (bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
    }
}

/// Peer-check results for a prepared round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub sum: u64,
    pub expected: u64,
    pub per_part_verified: Vec<bool>,
    /// Position (in the miner list) of the peer that checked each part.
    pub verifier: Vec<usize>,
}

impl Verification {
    pub fn positive(&self) -> usize {
        self.per_part_verified.iter().filter(|v| **v).count()
    }

    /// `ceil(0.51 N)` positive responses.
    pub fn quorum(&self) -> usize {
        (self.per_part_verified.len() * 51).div_ceil(100)
    }

    pub fn accepted(&self) -> bool {
        self.per_part_verified.iter().all(|v| *v)
            && self.sum == self.expected
            && self.positive() >= self.quorum()
    }
}

/// A block split among the miners, ready for peer verification.
#[derive(Debug, Clone)]
pub struct PorRound {
    parts: Vec<BlockPart>,
    /// Public keys as registered by the manager, indexed like `parts`.
    registry: Vec<Hash>,
    block_hash: Hash,
    timestamp: u64,
}

impl PorRound {
    /// Splits `block` into one part per miner, assigns a random permutation
    /// of `1..=N` and signs every part.
    pub fn prepare<R: Rng + ?Sized>(
        block: &[u8],
        miners: &[MinerState],
        timestamp: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = miners.len();
        if n < 2 {
            return Err(Error::Domain(format!(
                "a round needs at least 2 miners, got {n}"
            )));
        }
        let registry: Vec<Hash> = (0..n).map(|_| rng.gen()).collect();
        let mut numbers: Vec<u64> = (1..=n as u64).collect();
        numbers.shuffle(rng);
        let chunk = block.len().div_ceil(n).max(1);
        let parts = (0..n)
            .map(|i| {
                let lo = (i * chunk).min(block.len());
                let hi = ((i + 1) * chunk).min(block.len());
                let content = block[lo..hi].to_vec();
                let content_hash = sha256(&[&content]);
                BlockPart {
                    index: i + 1,
                    signature: sign(&content_hash, &registry[i], timestamp),
                    content,
                    content_hash,
                    assigned_number: numbers[i],
                    public_key: registry[i],
                    timestamp,
                }
            })
            .collect();
        Ok(Self {
            parts,
            registry,
            block_hash: sha256(&[block]),
            timestamp,
        })
    }

    pub fn parts(&self) -> &[BlockPart] {
        &self.parts
    }

    pub fn parts_mut(&mut self) -> &mut [BlockPart] {
        &mut self.parts
    }

    pub fn block_hash(&self) -> Hash {
        self.block_hash
    }

    /// Each miner hands its part to a uniformly random other miner, which
    /// recomputes the content hash and signature and checks the sender's key.
    pub fn verify<R: Rng + ?Sized>(&self, rng: &mut R) -> Verification {
        let n = self.parts.len();
        let mut sum = 0;
        let mut per_part_verified = Vec::with_capacity(n);
        let mut verifier = Vec::with_capacity(n);
        for (i, part) in self.parts.iter().enumerate() {
            let mut s = rng.gen_range(0..n - 1);
            if s >= i {
                s += 1;
            }
            verifier.push(s);
            let ok = self.check(i, part);
            if ok {
                sum += part.assigned_number;
            }
            per_part_verified.push(ok);
        }
        Verification {
            sum,
            expected: expected_sum(n),
            per_part_verified,
            verifier,
        }
    }

    fn check(&self, i: usize, part: &BlockPart) -> bool {
        let recomputed = sha256(&[&part.content]);
        part.public_key == self.registry[i]
            && recomputed == part.content_hash
            && part.timestamp == self.timestamp
            && sign(&recomputed, &part.public_key, part.timestamp) == part.signature
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainBlock {
    pub height: u64,
    pub prev_hash: Hash,
    pub block_hash: Hash,
    pub manager_device: usize,
    pub timestamp: u64,
    pub signature: Hash,
}

/// In-memory chain kept by the block managers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    blocks: Vec<ChainBlock>,
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[ChainBlock] {
        &self.blocks
    }

    pub fn tip_hash(&self) -> Hash {
        self.blocks.last().map_or([0; 32], |b| b.block_hash)
    }

    fn append(
        &mut self,
        block_hash: Hash,
        manager_device: usize,
        manager_key: &Hash,
        timestamp: u64,
    ) {
        let prev_hash = self.tip_hash();
        let signature = sha256(&[
            &prev_hash,
            &block_hash,
            manager_key,
            &timestamp.to_be_bytes(),
        ]);
        self.blocks.push(ChainBlock {
            height: self.blocks.len() as u64,
            prev_hash,
            block_hash,
            manager_device,
            timestamp,
            signature,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub accepted: bool,
    pub sum_check: u64,
    pub expected_rnd: u64,
    pub per_part_verified: Vec<bool>,
    /// Round latency, set by the slowest miner.
    pub latency_s: f64,
    pub bandwidth_bytes: f64,
}

/// `tx_per_block` random transactions filling `block_bytes`.
pub fn synthetic_block<R: Rng + ?Sized>(cc: &ConsensusConfig, rng: &mut R) -> Vec<u8> {
    let total = cc.block_bytes.round().max(1.0) as usize;
    let per_tx = total / cc.tx_per_block.max(1);
    let mut block = Vec::with_capacity(total);
    for tx in 0..cc.tx_per_block {
        let len = if tx + 1 == cc.tx_per_block {
            total - block.len()
        } else {
            per_tx
        };
        block.extend((0..len).map(|_| rng.gen::<u8>()));
    }
    block
}

/// Runs one full round: split, peer verification, sum and quorum checks, and
/// on acceptance the manager appends the block to `chain`.
/// `verify_cycles[d]` is device `d`'s verification allocation.
pub fn run_por_round<R: Rng + ?Sized>(
    block: &[u8],
    miners: &[MinerState],
    scenario: &Scenario,
    verify_cycles: &[f64],
    chain: &mut Chain,
    rng: &mut R,
) -> Result<ConsensusOutcome> {
    let timestamp = chain.len() as u64;
    let round = PorRound::prepare(block, miners, timestamp, rng)?;
    finish_round(&round, miners, scenario, verify_cycles, chain, rng)
}

impl PorRound {
    /// Verification plus bookkeeping for an already prepared (possibly
    /// tampered) round.
    pub fn finish<R: Rng + ?Sized>(
        &self,
        miners: &[MinerState],
        scenario: &Scenario,
        verify_cycles: &[f64],
        chain: &mut Chain,
        rng: &mut R,
    ) -> Result<ConsensusOutcome> {
        finish_round(self, miners, scenario, verify_cycles, chain, rng)
    }
}

fn finish_round<R: Rng + ?Sized>(
    round: &PorRound,
    miners: &[MinerState],
    scenario: &Scenario,
    verify_cycles: &[f64],
    chain: &mut Chain,
    rng: &mut R,
) -> Result<ConsensusOutcome> {
    let n = miners.len();
    if round.parts.len() != n {
        return Err(Error::Dimension {
            expected: round.parts.len(),
            actual: n,
        });
    }
    let cc = &scenario.consensus;
    let mut latency_s: f64 = 0.0;
    for m in miners {
        let device = scenario.devices.get(m.device_index).ok_or_else(|| {
            Error::Contract(format!("miner device {} not in scenario", m.device_index))
        })?;
        let phi = *verify_cycles.get(m.device_index).ok_or(Error::Dimension {
            expected: scenario.num_devices(),
            actual: verify_cycles.len(),
        })?;
        latency_s = latency_s.max(por_latency(device, phi, cc));
    }
    let v = round.verify(rng);
    let accepted = v.accepted();
    if accepted {
        let manager = miners
            .iter()
            .position(|m| m.is_manager)
            .ok_or_else(|| Error::Contract("round has no manager".into()))?;
        chain.append(
            round.block_hash,
            miners[manager].device_index,
            &round.registry[manager],
            round.timestamp,
        );
    }
    Ok(ConsensusOutcome {
        accepted,
        sum_check: v.sum,
        expected_rnd: v.expected,
        per_part_verified: v.per_part_verified,
        latency_s,
        bandwidth_bytes: bandwidth_cost(Scheme::Por, cc, n),
    })
}
