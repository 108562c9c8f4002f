//! Autonomous mobility-on-demand plant on a complete station digraph.

pub mod demand;
pub mod env;
pub mod metrics;
pub mod network;
pub mod plant;
pub mod rebalance;

pub use demand::{DemandRecord, DemandSource, DemandTrace, PoissonDemand};
pub use env::{prepare_segment, AmodDisturbance, AmodEnv, AmodEnvOptions, InitialState, Segment};
pub use metrics::{metrics, Metrics, MetricsRow};
pub use network::{link_count, link_index, links, NetworkSpec, RateSegment};
pub use plant::{amod_step_componentwise, build_dynamics, cost_from_network, equilibrium, incidence, AmodPlant, Equilibrium, Incidence};
pub use rebalance::{kkt_residuals, solve_rebalancing, KktResiduals, Rebalancing, KKT_TOL};
