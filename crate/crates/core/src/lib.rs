//! Joint task offloading and block mining for blockchain-based mobile edge
//! computing.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: scenario types, JSON loading, synthetic generation, path loss
//! - [`comms`]: uplink rate, local/edge cost, offloading utility
//! - [`consensus`]: reputation-based miner selection, the split-block
//!   verification round and the PoR/DPoS latency and bandwidth models
//! - [`env`]: the multi-agent Markov game built on top of the cost models
//! - [`nn`] and [`madrl`]: small MLPs, Adam, and the MA-DDPG trainer
//! - [`game`]: the channel-selection potential game and its Nash solver
//! - [`baseline`] and [`harness`]: heuristic policies and the experiment runner
//!
//! Numeric kernels are generic over the scalar type. The aliases below pin the
//! common instantiations.

pub mod baseline;
pub mod comms;
pub mod consensus;
pub mod env;
pub mod error;
pub mod game;
pub mod harness;
pub mod madrl;
pub mod model;
pub mod nn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{GameScalar, Scalar};

/// Exact rational scalar for the potential-game checks.
pub type Rational = num_rational::Rational64;

pub type Mlp32 = nn::Mlp<f32>;
pub type Mlp64 = nn::Mlp<f64>;
pub type Adam32 = nn::Adam<f32>;
pub type Adam64 = nn::Adam<f64>;
pub type Trainer32 = madrl::Trainer<f32>;
pub type Trainer64 = madrl::Trainer<f64>;
pub type PolicySet32 = madrl::PolicySet<f32>;
pub type PolicySet64 = madrl::PolicySet<f64>;
pub type GameInstance64 = game::GameInstance<f64>;
pub type ExactGameInstance = game::GameInstance<Rational>;
