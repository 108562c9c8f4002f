use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lq::{self, CostSpec, Dims, SystemDynamics, Transition, DIVERGENCE_LIMIT};

/// Anything the learner can interact with one step at a time.
///
/// The learner never sees the model; it only proposes `(v, d)` and reads back
/// the realised transition.
pub trait Environment {
    fn dims(&self) -> Dims;

    fn state(&self) -> DVector<f64>;

    /// Whether the proposed disturbance is applied (adversarial) or replaced
    /// by one the environment generates (exogenous).
    fn disturbance_selectable(&self) -> bool;

    /// Applies one step. The returned transition carries the disturbance that
    /// actually acted on the plant.
    fn step(&mut self, v: &DVector<f64>, d: &DVector<f64>) -> Result<Transition>;

    /// A new stage cost that takes effect from the next step, if any.
    fn take_cost_change(&mut self) -> Option<CostSpec> {
        None
    }
}

/// Disturbance handling for [`LinearEnv`].
#[derive(Debug, Clone)]
pub enum LinearDisturbance {
    /// The learner's proposal is applied as is.
    Adversarial,
    /// i.i.d. `N(0, std^2 I)` disturbance, independent of the proposal.
    Gaussian { std: f64, rng: ChaCha8Rng },
}

impl LinearDisturbance {
    pub fn gaussian(std: f64, seed: u64) -> Self {
        LinearDisturbance::Gaussian {
            std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// A simulated linear plant.
#[derive(Debug, Clone)]
pub struct LinearEnv {
    dynamics: SystemDynamics,
    x: DVector<f64>,
    disturbance: LinearDisturbance,
    steps: usize,
}

impl LinearEnv {
    pub fn new(dynamics: SystemDynamics, x0: DVector<f64>, disturbance: LinearDisturbance) -> Result<Self> {
        let m1 = dynamics.dims().state;
        if x0.len() != m1 {
            return Err(Error::dims("initial state", m1, x0.len()));
        }
        Ok(LinearEnv {
            dynamics,
            x: x0,
            disturbance,
            steps: 0,
        })
    }

    pub fn dynamics(&self) -> &SystemDynamics {
        &self.dynamics
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl Environment for LinearEnv {
    fn dims(&self) -> Dims {
        self.dynamics.dims()
    }

    fn state(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn disturbance_selectable(&self) -> bool {
        matches!(self.disturbance, LinearDisturbance::Adversarial)
    }

    fn step(&mut self, v: &DVector<f64>, d: &DVector<f64>) -> Result<Transition> {
        let d = match &mut self.disturbance {
            LinearDisturbance::Adversarial => d.clone(),
            LinearDisturbance::Gaussian { std, rng } => {
                let m3 = self.dynamics.dims().disturbance;
                DVector::from_fn(m3, |_, _| {
                    let e: f64 = StandardNormal.sample(rng);
                    *std * e
                })
            }
        };
        let x_next = lq::step(&self.dynamics, &self.x, v, &d)?;
        let norm = linalg::inf_norm(&x_next);
        if !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step: self.steps, norm });
        }
        let tr = Transition {
            x: std::mem::replace(&mut self.x, x_next.clone()),
            v: v.clone(),
            d,
            x_next,
        };
        self.steps += 1;
        Ok(tr)
    }
}

/// Zero-mean Gaussian sampler with covariance `W`, via its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianProbe {
    factor: DMatrix<f64>,
}

impl GaussianProbe {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::dims("noise covariance", "square", format!("{:?}", cov.shape())));
        }
        if cov.iter().all(|x| *x == 0.0) {
            return Ok(GaussianProbe { factor: cov.clone() });
        }
        let chol = nalgebra::Cholesky::new(linalg::symmetrize(cov)).ok_or(Error::NotDefinite {
            what: "probing noise covariance",
            min_eigenvalue: linalg::min_eigenvalue(cov),
        })?;
        Ok(GaussianProbe { factor: chol.l() })
    }

    pub fn scaled_identity(n: usize, variance: f64) -> Result<Self> {
        Self::new(&(DMatrix::identity(n, n) * variance))
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.factor.nrows();
        let e = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
        &self.factor * e
    }
}
