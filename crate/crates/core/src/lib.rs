//! Two-stage predictive control of flexible loads on radial distribution feeders.
//!
//! The relaxed branch-flow network model is assembled into second-order-cone programs
//! and solved with Clarabel. A periodic reference without flexible loads is computed
//! once; a receding-horizon controller then schedules shapeable loads, batteries and
//! capacitors while a plug-and-play protocol admits new loads only when the next
//! problem is guaranteed to stay feasible.

pub mod assets;
pub mod checks;
pub mod cli;
pub mod conic;
pub mod controller;
pub mod distflow;
pub mod error;
pub mod fixtures;
pub mod network;
pub mod pnp;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
