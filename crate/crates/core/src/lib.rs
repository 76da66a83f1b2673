//! Portfolio optimization under a hidden Ornstein–Uhlenbeck drift observed
//! through returns and Poisson-arriving expert opinions.
//!
//! The crate covers the market simulator, the jump-augmented Kalman filter,
//! the risk-sensitive state dynamics, a lattice solver for the one-asset
//! dynamic programming equation, Monte Carlo strategy evaluation and the
//! regularization experiments.

pub mod error;
pub mod eval;
pub mod dpe;
pub mod filter;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod market;
pub mod oracles;
pub mod par;
pub mod regularization;
pub mod rng;
pub mod rule;
pub mod serde_mat;
pub mod state_space;
pub mod stats;

pub use error::{Error, Result};
pub use market::{Model, ModelParams, OneAsset};
