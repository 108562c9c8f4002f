use nalgebra::DVector;

use super::demand::DemandSource;
use super::network::NetworkSpec;
use super::plant::{build_dynamics, cost_from_network, equilibrium, AmodPlant, Equilibrium};
use super::rebalance::{solve_rebalancing, Rebalancing, KKT_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lq::{self, CostSpec, Dims, Trajectory, Transition, DIVERGENCE_LIMIT};
use crate::qlearn::Environment;

/// Disturbance handling for [`AmodEnv`].
#[derive(Debug, Clone)]
pub enum AmodDisturbance {
    /// Customer arrivals come from the source; the learner's proposal is ignored.
    Exogenous(DemandSource),
    /// Arrivals are `lambda + d` for the proposed deviation `d`.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Empty queues and links, idle vehicles split evenly: `fleet_size / n`
    /// per station, or one each without a fleet size.
    Default,
    Equilibrium,
    /// Original (unshifted) coordinates.
    Custom(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct AmodEnvOptions {
    pub rho: f64,
    pub gamma: f64,
    pub fleet_size: Option<f64>,
    /// Equilibrium queue length on every link.
    pub queue_target: f64,
    pub initial: InitialState,
    pub disturbance: AmodDisturbance,
}

/// Operating data of one demand segment.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start_iteration: usize,
    pub rates: DVector<f64>,
    pub rebalancing: Rebalancing,
    pub equilibrium: Equilibrium,
    pub cost: CostSpec,
}

/// Builds the rebalancing flow, equilibrium and stage cost for the given rates.
pub fn prepare_segment(
    spec: &NetworkSpec,
    start_iteration: usize,
    rates: &DVector<f64>,
    rho: f64,
    gamma: f64,
    fleet_size: Option<f64>,
    queue_target: f64,
) -> Result<Segment> {
    let local = spec.with_rates(rates)?;
    let rebalancing = solve_rebalancing(&local)?;
    let equilibrium = equilibrium(&local, &rebalancing.r_bar, fleet_size, KKT_TOL)?.with_queue_target(queue_target)?;
    let cost = cost_from_network(&local, rho, gamma)?;
    Ok(Segment {
        start_iteration,
        rates: rates.clone(),
        rebalancing,
        equilibrium,
        cost,
    })
}

/// The AMoD plant seen in coordinates shifted to the active equilibrium.
///
/// When the rate schedule moves to a new segment, the equilibrium and stage
/// cost are recomputed and the new cost is offered through
/// [`Environment::take_cost_change`]. The trajectory is kept in original
/// coordinates.
#[derive(Debug, Clone)]
pub struct AmodEnv {
    spec: NetworkSpec,
    plant: AmodPlant,
    segments: Vec<Segment>,
    active: usize,
    disturbance: AmodDisturbance,
    x: DVector<f64>,
    iteration: usize,
    pending_cost: Option<CostSpec>,
    trajectory: Trajectory,
}

impl AmodEnv {
    pub fn new(spec: NetworkSpec, options: AmodEnvOptions) -> Result<Self> {
        spec.validate()?;
        let plant = build_dynamics(&spec)?;
        let mut segments = Vec::new();
        if spec.schedule.is_empty() {
            segments.push(prepare_segment(&spec, 0, &spec.rate_vector(), options.rho, options.gamma, options.fleet_size, options.queue_target)?);
        } else {
            for seg in &spec.schedule {
                let rates = spec.rates_at(seg.start_iteration);
                segments.push(prepare_segment(&spec, seg.start_iteration, &rates, options.rho, options.gamma, options.fleet_size, options.queue_target)?);
            }
        }
        let x = match options.initial {
            InitialState::Default => {
                let m = plant.link_count();
                let per_station = options.fleet_size.map_or(1.0, |f| f / spec.n as f64);
                plant.pack_state(&DVector::zeros(m), &DVector::from_element(spec.n, per_station), &DVector::zeros(m))?
            }
            InitialState::Equilibrium => segments[0].equilibrium.state(&plant)?,
            InitialState::Custom(x) => {
                if x.len() != plant.dims().state {
                    return Err(Error::dims("initial AMoD state", plant.dims().state, x.len()));
                }
                x
            }
        };
        let mut disturbance = options.disturbance;
        if let AmodDisturbance::Exogenous(src) = &mut disturbance {
            src.set_rates(&segments[0].rates)?;
        }
        Ok(AmodEnv {
            spec,
            plant,
            segments,
            active: 0,
            disturbance,
            x,
            iteration: 0,
            pending_cost: None,
            trajectory: Trajectory::default(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn plant(&self) -> &AmodPlant {
        &self.plant
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn active_segment(&self) -> &Segment {
        &self.segments[self.active]
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.segments[self.active].equilibrium
    }

    pub fn current_cost(&self) -> &CostSpec {
        &self.segments[self.active].cost
    }

    /// Steps taken so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// State in original coordinates.
    pub fn original_state(&self) -> &DVector<f64> {
        &self.x
    }

    /// Every step taken, in original coordinates. `cost` accumulates the
    /// stage cost in shifted coordinates.
    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    /// Index of the segment in effect at `iteration`.
    pub fn segment_index_at(&self, iteration: usize) -> usize {
        self.segments.partition_point(|s| s.start_iteration <= iteration) - 1
    }
}

impl Environment for AmodEnv {
    fn dims(&self) -> Dims {
        self.plant.dims()
    }

    fn state(&self) -> DVector<f64> {
        let xb = self.equilibrium().state(&self.plant).expect("equilibrium matches plant");
        &self.x - xb
    }

    fn disturbance_selectable(&self) -> bool {
        matches!(self.disturbance, AmodDisturbance::Adversarial)
    }

    fn step(&mut self, v: &DVector<f64>, d: &DVector<f64>) -> Result<Transition> {
        let dims = self.plant.dims();
        if v.len() != dims.control {
            return Err(Error::dims("AMoD control", dims.control, v.len()));
        }
        if d.len() != dims.disturbance {
            return Err(Error::dims("AMoD disturbance", dims.disturbance, d.len()));
        }
        let seg = &self.segments[self.active];
        let eq = &seg.equilibrium;
        let v_orig = v + eq.control(&self.plant)?;
        let d_orig = match &mut self.disturbance {
            AmodDisturbance::Exogenous(src) => src.next(self.iteration)?,
            AmodDisturbance::Adversarial => d + eq.disturbance(),
        };
        let x_next = lq::step(self.plant.dynamics(), &self.x, &v_orig, &d_orig)?;
        let norm = linalg::inf_norm(&x_next);
        if !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step: self.iteration, norm });
        }
        let (xs, vs, ds) = eq.shift(&self.plant, &self.x, &v_orig, &d_orig)?;
        let xs_next = &x_next - eq.state(&self.plant)?;
        self.trajectory.cost += lq::stage_cost(&seg.cost, &xs, &vs, &ds)?;
        self.trajectory.transitions.push(Transition {
            x: std::mem::replace(&mut self.x, x_next.clone()),
            v: v_orig,
            d: d_orig,
            x_next,
        });
        self.iteration += 1;

        let next = self.segment_index_at(self.iteration);
        if next != self.active {
            self.active = next;
            if let AmodDisturbance::Exogenous(src) = &mut self.disturbance {
                src.set_rates(&self.segments[next].rates)?;
            }
            self.pending_cost = Some(self.segments[next].cost.clone());
        }
        Ok(Transition {
            x: xs,
            v: vs,
            d: ds,
            x_next: xs_next,
        })
    }

    fn take_cost_change(&mut self) -> Option<CostSpec> {
        self.pending_cost.take()
    }
}
