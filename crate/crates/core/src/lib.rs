//! Zero-sum linear-quadratic games: model-based Riccati solutions, model-free
//! recursive Q-learning, and an autonomous mobility-on-demand plant.

pub mod amod;
pub mod error;
pub mod linalg;
pub mod lq;
pub mod qlearn;
pub mod riccati;

pub use error::{Error, Result};
pub use lq::{CostSpec, Dims, PolicyPair, SystemDynamics, Trajectory, Transition};
pub use riccati::{solve_riccati, QKernel, RiccatiSolution, ValueKernel};
