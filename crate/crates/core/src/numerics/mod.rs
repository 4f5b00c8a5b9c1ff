//! Special functions and reproducible random streams.

mod erf;
mod rng;

pub use erf::{erf, erf_inv, erfc};
pub use rng::{master_seed_from_env, RngState, SEED_ENV_VAR};
