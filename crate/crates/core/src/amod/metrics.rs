use super::plant::AmodPlant;
use crate::error::{Error, Result};
use crate::lq::Trajectory;

/// Two-minute steps aggregated to ten-minute points.
pub const DEFAULT_WINDOW: usize = 5;

/// Entries below `-NEGATIVITY_TOL` count as nonnegativity violations.
pub const NEGATIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub window: usize,
    pub start_step: usize,
    /// Mean of `w` over links and steps in the window.
    pub queue: f64,
    /// Mean of `U`.
    pub carrying: f64,
    /// Mean of `R`.
    pub rebalancing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rows: Vec<MetricsRow>,
    /// Negative entries of `(w, p, g, U, R)` over the trajectory.
    pub violations: usize,
}

/// Per-window fleet statistics of a trajectory in original coordinates. A
/// final partial window is averaged over the steps it has.
pub fn metrics(traj: &Trajectory, plant: &AmodPlant, window: usize) -> Result<Metrics> {
    if window == 0 {
        return Err(Error::InvalidArgument("metrics window must be positive".into()));
    }
    let dims = plant.dims();
    let mut per_step = Vec::with_capacity(traj.len());
    let mut violations = 0;
    for tr in &traj.transitions {
        tr.check_dims(dims)?;
        let w = tr.x.rows_range(plant.w_range());
        let u = tr.v.rows_range(plant.u_range());
        let r = tr.v.rows_range(plant.r_range());
        per_step.push((w.mean(), u.mean(), r.mean()));
        violations += tr.x.iter().chain(tr.v.iter()).filter(|e| **e < -NEGATIVITY_TOL).count();
    }
    let rows = per_step
        .chunks(window)
        .enumerate()
        .map(|(k, chunk)| {
            let len = chunk.len() as f64;
            MetricsRow {
                window: k,
                start_step: k * window,
                queue: chunk.iter().map(|c| c.0).sum::<f64>() / len,
                carrying: chunk.iter().map(|c| c.1).sum::<f64>() / len,
                rebalancing: chunk.iter().map(|c| c.2).sum::<f64>() / len,
            }
        })
        .collect();
    Ok(Metrics { rows, violations })
}
