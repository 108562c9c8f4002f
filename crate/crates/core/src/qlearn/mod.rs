//! Model-free Q-learning of the game kernel from trajectory data.

pub mod algorithm;
pub mod bench;
pub mod critic;
pub mod env;
pub mod param;

pub use algorithm::{run_algorithm1, InitialKernel, LearnFailure, LearnOutput, LearnerConfig, LearningTrace, TraceRecord};
pub use critic::{collect_init, improve_policies, init_solve, CriticSettings, CriticState, InitBatch, UpdateInfo};
pub use env::{Environment, GaussianProbe, LinearDisturbance, LinearEnv};
pub use param::{unvecs, vecs, vecv, SymVec};
