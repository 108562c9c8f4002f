//! Linear plant, zero-sum stage cost, linear policies and rollouts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, TOL_SYM};

/// Rollouts abort once `|x|_inf` exceeds this bound.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// State, control and disturbance dimensions `(m1, m2, m3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub disturbance: usize,
}

impl Dims {
    pub const fn new(state: usize, control: usize, disturbance: usize) -> Self {
        Dims {
            state,
            control,
            disturbance,
        }
    }

    /// Length of the stacked vector `z = (x, v, d)`.
    pub const fn joint(&self) -> usize {
        self.state + self.control + self.disturbance
    }

    /// Number of free parameters of the Q-kernel, `n_z (n_z + 1) / 2`.
    pub const fn q_bar(&self) -> usize {
        let n = self.joint();
        n * (n + 1) / 2
    }

    /// Number of free parameters of the value kernel.
    pub const fn value_params(&self) -> usize {
        self.state * (self.state + 1) / 2
    }
}

/// The plant `x+ = A x + B v + L d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    l: DMatrix<f64>,
}

impl SystemDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, l: DMatrix<f64>) -> Result<Self> {
        let m1 = a.nrows();
        if m1 == 0 || a.ncols() != m1 {
            return Err(Error::dims("A", "square, non-empty", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != m1 || b.ncols() == 0 {
            return Err(Error::dims("B", format!("{m1}xm2"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if l.nrows() != m1 || l.ncols() == 0 {
            return Err(Error::dims("L", format!("{m1}xm3"), format!("{}x{}", l.nrows(), l.ncols())));
        }
        if !(linalg::all_finite(&a) && linalg::all_finite(&b) && linalg::all_finite(&l)) {
            return Err(Error::NonFinite("system matrices"));
        }
        Ok(SystemDynamics { a, b, l })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.a.nrows(), self.b.ncols(), self.l.ncols())
    }

    /// `[A B L]`, the map from `z` to the next state.
    pub fn joint_map(&self) -> DMatrix<f64> {
        linalg::hstack(&[&self.a, &self.b, &self.l])
    }

    /// Eigenvalues of `A` (diagnostic only; stabilizability is assumed, not checked).
    pub fn open_loop_eigenvalues(&self) -> Vec<nalgebra::Complex<f64>> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }
}

/// Stage-cost data `x'Rx x + v'Rv v - gamma^2 d'd`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    rx: DMatrix<f64>,
    rv: DMatrix<f64>,
    gamma: f64,
    raw_asymmetry: f64,
}

impl CostSpec {
    pub fn new(rx: DMatrix<f64>, rv: DMatrix<f64>, gamma: f64) -> Result<Self> {
        Self::with_tolerance(rx, rv, gamma, TOL_SYM)
    }

    pub fn with_tolerance(rx: DMatrix<f64>, rv: DMatrix<f64>, gamma: f64, tol_sym: f64) -> Result<Self> {
        if rx.nrows() != rx.ncols() {
            return Err(Error::dims("Rx", "square", format!("{}x{}", rx.nrows(), rx.ncols())));
        }
        if rv.nrows() != rv.ncols() {
            return Err(Error::dims("Rv", "square", format!("{}x{}", rv.nrows(), rv.ncols())));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        if !(linalg::all_finite(&rx) && linalg::all_finite(&rv)) {
            return Err(Error::NonFinite("cost matrices"));
        }
        let asym_x = linalg::max_asymmetry(&rx);
        let asym_v = linalg::max_asymmetry(&rv);
        if asym_x > tol_sym {
            return Err(Error::Asymmetric { what: "Rx", asymmetry: asym_x, tol: tol_sym });
        }
        if asym_v > tol_sym {
            return Err(Error::Asymmetric { what: "Rv", asymmetry: asym_v, tol: tol_sym });
        }
        let rx = linalg::symmetrize(&rx);
        let rv = linalg::symmetrize(&rv);
        let min_x = linalg::min_eigenvalue(&rx);
        if min_x < -tol_sym {
            return Err(Error::NotDefinite { what: "Rx (PSD required)", min_eigenvalue: min_x });
        }
        let min_v = linalg::min_eigenvalue(&rv);
        if min_v <= 0.0 {
            return Err(Error::NotDefinite { what: "Rv (PD required)", min_eigenvalue: min_v });
        }
        Ok(CostSpec {
            rx,
            rv,
            gamma,
            raw_asymmetry: asym_x.max(asym_v),
        })
    }

    pub fn rx(&self) -> &DMatrix<f64> {
        &self.rx
    }

    pub fn rv(&self) -> &DMatrix<f64> {
        &self.rv
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Asymmetry of the inputs before symmetrization.
    pub fn raw_asymmetry(&self) -> f64 {
        self.raw_asymmetry
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        CostSpec::new(self.rx.clone(), self.rv.clone(), gamma)
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.rx.nrows() != dims.state {
            return Err(Error::dims("Rx", dims.state, self.rx.nrows()));
        }
        if self.rv.nrows() != dims.control {
            return Err(Error::dims("Rv", dims.control, self.rv.nrows()));
        }
        Ok(())
    }
}

/// Linear state feedback for the controller and the disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub kv: DMatrix<f64>,
    pub kd: DMatrix<f64>,
}

impl PolicyPair {
    pub fn zeros(dims: Dims) -> Self {
        PolicyPair {
            kv: DMatrix::zeros(dims.control, dims.state),
            kd: DMatrix::zeros(dims.disturbance, dims.state),
        }
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.kv.shape() != (dims.control, dims.state) {
            return Err(Error::dims("Kv", format!("{}x{}", dims.control, dims.state), format!("{:?}", self.kv.shape())));
        }
        if self.kd.shape() != (dims.disturbance, dims.state) {
            return Err(Error::dims("Kd", format!("{}x{}", dims.disturbance, dims.state), format!("{:?}", self.kd.shape())));
        }
        Ok(())
    }

    /// The stacked map `x -> (x, Kv x, Kd x)`.
    pub fn lift(&self) -> DMatrix<f64> {
        let n = self.kv.ncols();
        linalg::vstack(&[&DMatrix::identity(n, n), &self.kv, &self.kd])
    }
}

/// One observed sample `(x_t, v_t, d_t, x_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub d: DVector<f64>,
    pub x_next: DVector<f64>,
}

impl Transition {
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.x.len() != dims.state || self.x_next.len() != dims.state {
            return Err(Error::dims("transition state", dims.state, self.x.len()));
        }
        if self.v.len() != dims.control {
            return Err(Error::dims("transition control", dims.control, self.v.len()));
        }
        if self.d.len() != dims.disturbance {
            return Err(Error::dims("transition disturbance", dims.disturbance, self.d.len()));
        }
        Ok(())
    }

    /// The stacked vector `z = (x, v, d)`.
    pub fn joint(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.x.len() + self.v.len() + self.d.len());
        z.rows_mut(0, self.x.len()).copy_from(&self.x);
        z.rows_mut(self.x.len(), self.v.len()).copy_from(&self.v);
        z.rows_mut(self.x.len() + self.v.len(), self.d.len()).copy_from(&self.d);
        z
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub cost: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Consecutive transitions chain (`x_next` of step t is `x` of step t+1).
    pub fn is_chained(&self) -> bool {
        self.transitions.windows(2).all(|w| w[0].x_next == w[1].x)
    }
}

/// Where the disturbance of a rollout comes from.
pub enum DisturbanceSource<'a> {
    /// `d_t = Kd x_t`.
    Policy,
    /// Exogenous supplier indexed by step.
    Exogenous(&'a mut dyn FnMut(usize) -> DVector<f64>),
}

pub fn step(dyn_: &SystemDynamics, x: &DVector<f64>, v: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    let dims = dyn_.dims();
    if x.len() != dims.state {
        return Err(Error::dims("step x", dims.state, x.len()));
    }
    if v.len() != dims.control {
        return Err(Error::dims("step v", dims.control, v.len()));
    }
    if d.len() != dims.disturbance {
        return Err(Error::dims("step d", dims.disturbance, d.len()));
    }
    Ok(&dyn_.a * x + &dyn_.b * v + &dyn_.l * d)
}

pub fn stage_cost(cost: &CostSpec, x: &DVector<f64>, v: &DVector<f64>, d: &DVector<f64>) -> Result<f64> {
    if x.len() != cost.rx.nrows() {
        return Err(Error::dims("stage_cost x", cost.rx.nrows(), x.len()));
    }
    if v.len() != cost.rv.nrows() {
        return Err(Error::dims("stage_cost v", cost.rv.nrows(), v.len()));
    }
    let g2 = cost.gamma * cost.gamma;
    Ok(x.dot(&(&cost.rx * x)) + v.dot(&(&cost.rv * v)) - g2 * d.dot(d))
}

/// Simulates `horizon` steps under `v = Kv x` and the chosen disturbance source.
pub fn rollout(
    dyn_: &SystemDynamics,
    cost: &CostSpec,
    policies: &PolicyPair,
    x0: &DVector<f64>,
    mut disturbance: DisturbanceSource<'_>,
    horizon: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be >= 1".into()));
    }
    let dims = dyn_.dims();
    policies.check_dims(dims)?;
    cost.check_dims(dims)?;
    let mut traj = Trajectory::default();
    let mut x = x0.clone();
    for t in 0..horizon {
        let v = &policies.kv * &x;
        let d = match &mut disturbance {
            DisturbanceSource::Policy => &policies.kd * &x,
            DisturbanceSource::Exogenous(f) => f(t),
        };
        let x_next = step(dyn_, &x, &v, &d)?;
        let norm = linalg::inf_norm(&x_next);
        if !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step: t, norm });
        }
        traj.cost += stage_cost(cost, &x, &v, &d)?;
        traj.transitions.push(Transition {
            x: x.clone(),
            v,
            d,
            x_next: x_next.clone(),
        });
        x = x_next;
    }
    Ok(traj)
}

/// `A + B Kv + L Kd`.
pub fn closed_loop_matrix(dyn_: &SystemDynamics, policies: &PolicyPair) -> Result<DMatrix<f64>> {
    policies.check_dims(dyn_.dims())?;
    Ok(&dyn_.a + &dyn_.b * &policies.kv + &dyn_.l * &policies.kd)
}

/// `A + B Kv`, the loop closed by the controller alone.
pub fn control_loop_matrix(dyn_: &SystemDynamics, kv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dims = dyn_.dims();
    if kv.shape() != (dims.control, dims.state) {
        return Err(Error::dims("Kv", format!("{}x{}", dims.control, dims.state), format!("{:?}", kv.shape())));
    }
    Ok(&dyn_.a + &dyn_.b * kv)
}

pub fn closed_loop_spectral_radius(dyn_: &SystemDynamics, policies: &PolicyPair) -> Result<f64> {
    Ok(linalg::spectral_radius(&closed_loop_matrix(dyn_, policies)?))
}
