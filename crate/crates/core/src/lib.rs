//! Adaptive nonlinear control with regret guarantees: plant models,
//! adaptation laws, stability certificates, regret accounting, sampled-data
//! discretization and benchmark systems.

pub mod adapt;
pub mod bench;
pub mod c2d;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod regret;
pub mod stability;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
