//! Identification of closed-form governing expressions for iterated maps.
//!
//! The pipeline has four stages:
//!
//! 1. [`maps`] generates state data from a known map (and perturbs it with noise).
//! 2. [`netcore`] and [`train`] fit a sparse symbolic network to consecutive state pairs.
//! 3. [`simplify`] turns the trained network into an expression, snaps constants at a sweep of
//!    thresholds, picks the candidate with the lowest AIC, and refits linear coefficients by
//!    least squares.
//! 4. [`eval`] scores the result (RRMSE, noise-floor RRMSE, trajectory shadowing).
//!
//! [`experiment`] wires the stages together and writes report files.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod expr;
pub mod maps;
pub mod netcore;
pub mod par;
pub mod rng;
pub mod simplify;
pub mod train;

pub use error::{Error, Result};
pub use expr::{Expr, ExprSystem, UnaryOp};
pub use maps::{Dataset, MapSpec, NoiseConfig, StateVec};
pub use netcore::{NetworkConfig, NetworkParams};
pub use train::{TrainConfig, TrainedModel};
