//! The two simulation studies plus the scalar test system, as reproducible
//! builders.

pub mod cartpole;
pub mod features;
pub mod limit_cycle;
pub mod lqr;
pub mod scalar;
