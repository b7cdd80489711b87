//! Fully connected networks with reverse-mode gradients and Adam.

mod adam;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Dense, ForwardCache, Gradients, Mlp};
