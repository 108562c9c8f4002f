//! Critic estimation: the initial least-squares batch and the single-sample
//! recursive update with a Sherman-Morrison maintained inverse Gram matrix.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::env::{Environment, GaussianProbe};
use super::param::{self, triangular, vecv, vecv_into, SymVec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lq::{CostSpec, Dims, PolicyPair, Transition};
use crate::riccati::{self, QKernel};

/// Tolerance of the on-policy check on the applied control.
pub const ACT_TOL: f64 = 1e-9;
/// Relative singular-value threshold below which the initial regression is rank deficient.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticSettings {
    /// Exponential forgetting factor in `(0, 1]`; `1.0` is plain least squares.
    pub forgetting: f64,
    pub act_tol: f64,
    pub rank_tol: f64,
}

impl Default for CriticSettings {
    fn default() -> Self {
        CriticSettings {
            forgetting: 1.0,
            act_tol: ACT_TOL,
            rank_tol: RANK_TOL,
        }
    }
}

/// The probing batch that seeds the least-squares problem.
#[derive(Debug, Clone)]
pub struct InitBatch {
    /// Rows `vecv(z_t)`, `q x q_bar`.
    pub psi0: DMatrix<f64>,
    /// Rows `vecv(x_{t+1})`, `q x m1(m1+1)/2`.
    pub xplus0: DMatrix<f64>,
    pub transitions: Vec<Transition>,
    pub q: usize,
    pub dims: Dims,
}

impl InitBatch {
    pub fn from_transitions(transitions: Vec<Transition>, dims: Dims) -> Result<Self> {
        let q = transitions.len();
        let mut psi0 = DMatrix::zeros(q, dims.q_bar());
        let mut xplus0 = DMatrix::zeros(q, dims.value_params());
        for (t, tr) in transitions.iter().enumerate() {
            tr.check_dims(dims)?;
            psi0.set_row(t, &vecv(&tr.joint()).transpose());
            xplus0.set_row(t, &vecv(&tr.x_next).transpose());
        }
        Ok(InitBatch {
            psi0,
            xplus0,
            transitions,
            q,
            dims,
        })
    }

    /// `sigma_min / sigma_max` of `psi0` (0 for an all-zero batch).
    pub fn rank_ratio(&self) -> f64 {
        let sv = self.psi0.singular_values();
        let hi = sv.max();
        if hi == 0.0 {
            0.0
        } else {
            sv.min() / hi
        }
    }
}

/// Runs `q` probing steps with `v = Kv0 x + e_v` and, when the environment
/// lets the caller pick the disturbance, `d = Kd0 x + e_d`.
pub fn collect_init(
    env: &mut dyn Environment,
    policies0: &PolicyPair,
    noise_cov_v: &DMatrix<f64>,
    noise_cov_d: Option<&DMatrix<f64>>,
    q: usize,
    rng_seed: u64,
) -> Result<InitBatch> {
    let dims = env.dims();
    policies0.check_dims(dims)?;
    if q < dims.q_bar() {
        return Err(Error::InvalidArgument(format!(
            "initial batch needs q >= q_bar = {}, got {q}",
            dims.q_bar()
        )));
    }
    let probe_v = GaussianProbe::new(noise_cov_v)?;
    if probe_v.dim() != dims.control {
        return Err(Error::dims("control noise covariance", dims.control, probe_v.dim()));
    }
    let probe_d = noise_cov_d.map(GaussianProbe::new).transpose()?;
    if let Some(p) = &probe_d {
        if p.dim() != dims.disturbance {
            return Err(Error::dims("disturbance noise covariance", dims.disturbance, p.dim()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut transitions = Vec::with_capacity(q);
    for _ in 0..q {
        let x = env.state();
        let v = &policies0.kv * &x + probe_v.sample(&mut rng);
        let mut d = &policies0.kd * &x;
        if let (Some(p), true) = (&probe_d, env.disturbance_selectable()) {
            d += p.sample(&mut rng);
        }
        transitions.push(env.step(&v, &d)?);
    }
    InitBatch::from_transitions(transitions, dims)
}

/// Saddle-point gains of the kernel encoded by `s`.
pub fn improve_policies(s: &SymVec, dims: Dims) -> Result<PolicyPair> {
    if s.len() != dims.q_bar() {
        return Err(Error::dims("critic parameters", dims.q_bar(), s.len()));
    }
    riccati::gains_from_s(&QKernel::from_symmetric(param::unvecs(s), dims))
}

/// One Sherman-Morrison step on `(m, s)` for the regression row `r` and its
/// target. Returns the innovation `target - r.s`.
///
/// `m` must be the (symmetric) inverse Gram matrix of all rows seen so far and
/// `s` their least-squares solution; afterwards both include `r`.
pub fn rank_one_update(
    m: &mut DMatrix<f64>,
    s: &mut DVector<f64>,
    r: &DVector<f64>,
    target: f64,
    forgetting: f64,
) -> Result<f64> {
    let mr = &*m * r;
    let denom = forgetting + r.dot(&mr);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::GramCorrupted { denominator: denom });
    }
    let innovation = target - r.dot(s);
    if !innovation.is_finite() {
        return Err(Error::NonFinite("innovation"));
    }
    s.axpy(innovation / denom, &mr, 1.0);
    m.ger(-1.0 / denom, &mr, &mr, 1.0);
    if forgetting != 1.0 {
        *m /= forgetting;
    }
    linalg::symmetrize_in_place(m);
    Ok(innovation)
}

/// Learner state: kernel estimate, inverse Gram matrix and current policies.
///
/// Besides `M` the critic carries `lift = M Psi' X+`, the least-squares map
/// from the quadratic monomials of `z_t` to those of `x_{t+1}`. Every stored
/// regression row can then be re-targeted to the current value kernel in
/// `O(q_bar * m1^2)`, which keeps the estimate equal to the full
/// least-squares solution under the current policy.
#[derive(Debug, Clone)]
pub struct CriticState {
    dims: Dims,
    s: SymVec,
    m: DMatrix<f64>,
    lift: DMatrix<f64>,
    xi: SymVec,
    policies: PolicyPair,
    iteration: usize,
    settings: CriticSettings,
}

/// Details of a single recursive update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    pub innovation: f64,
    pub denominator: f64,
}

/// Solves the initial least-squares problem and improves the policies once.
pub fn init_solve(
    batch: &InitBatch,
    cost: &CostSpec,
    s0: &SymVec,
    policies0: &PolicyPair,
    settings: CriticSettings,
) -> Result<CriticState> {
    let dims = batch.dims;
    cost.check_dims(dims)?;
    if batch.psi0.ncols() != dims.q_bar() || batch.xplus0.ncols() != dims.value_params() {
        return Err(Error::dims("initial batch columns", dims.q_bar(), batch.psi0.ncols()));
    }
    policies0.check_dims(dims)?;
    if s0.len() != dims.q_bar() {
        return Err(Error::dims("s0", dims.q_bar(), s0.len()));
    }
    if batch.psi0.nrows() < dims.q_bar() || batch.xplus0.nrows() != batch.psi0.nrows() {
        return Err(Error::dims("initial batch rows", format!(">= {}", dims.q_bar()), batch.psi0.nrows()));
    }
    if !(settings.forgetting > 0.0 && settings.forgetting <= 1.0) {
        return Err(Error::InvalidArgument(format!("forgetting factor must be in (0, 1], got {}", settings.forgetting)));
    }

    let ratio = batch.rank_ratio();
    if !(ratio >= settings.rank_tol) {
        return Err(Error::RankDeficient { ratio });
    }
    // Psi0 = Q R: M0 = R^-1 R^-T, lift0 = R^-1 Q' X0+.
    let qr = batch.psi0.clone().qr();
    let r = qr.r();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(r.nrows(), r.nrows()))
        .ok_or(Error::RankDeficient { ratio })?;
    let mut m = &r_inv * r_inv.transpose();
    linalg::symmetrize_in_place(&mut m);
    let mut qt_xplus = batch.xplus0.clone();
    qr.q_tr_mul(&mut qt_xplus);
    let lift = &r_inv * qt_xplus.rows(0, r.nrows());

    let xi = param::vecs_unchecked(riccati::g_matrix(cost, dims).matrix());
    let p0 = value_params(s0, policies0, dims)?;
    let s1 = xi.as_vector() + &lift * p0;
    let s1 = SymVec::new(s1, dims.joint())?;
    let policies = improve_policies(&s1, dims)?;
    Ok(CriticState {
        dims,
        s: s1,
        m,
        lift,
        xi,
        policies,
        iteration: 1,
        settings,
    })
}

/// `vecs(T' S T)` for `T = [I; Kv; Kd]`.
fn value_params(s: &SymVec, policies: &PolicyPair, dims: Dims) -> Result<DVector<f64>> {
    let p = riccati::p_from_s(&QKernel::from_symmetric(param::unvecs(s), dims), policies)?;
    Ok(param::vecs_unchecked(p.matrix()).into_vector())
}

impl CriticState {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn s(&self) -> &SymVec {
        &self.s
    }

    pub fn kernel(&self) -> DMatrix<f64> {
        param::unvecs(&self.s)
    }

    pub fn inverse_gram(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn lift(&self) -> &DMatrix<f64> {
        &self.lift
    }

    pub fn xi(&self) -> &SymVec {
        &self.xi
    }

    pub fn policies(&self) -> &PolicyPair {
        &self.policies
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn settings(&self) -> CriticSettings {
        self.settings
    }

    /// Value kernel `P^i` implied by the current estimate and policies.
    pub fn value_kernel(&self) -> Result<DMatrix<f64>> {
        let kernel = QKernel::new(self.kernel(), self.dims)?;
        Ok(riccati::p_from_s(&kernel, &self.policies)?.into_matrix())
    }

    /// Replaces the stage cost used to build targets (`xi = vecs(G)`).
    pub fn set_cost(&mut self, cost: &CostSpec) -> Result<()> {
        cost.check_dims(self.dims)?;
        self.xi = param::vecs_unchecked(riccati::g_matrix(cost, self.dims).matrix());
        Ok(())
    }

    /// Pure transition `state -> state'` for one observed sample.
    pub fn rls_update(&self, obs: &Transition) -> Result<CriticState> {
        let mut next = self.clone();
        next.update(obs)?;
        Ok(next)
    }

    /// In-place form of [`CriticState::rls_update`]. On error the state is unchanged.
    pub fn update(&mut self, obs: &Transition) -> Result<UpdateInfo> {
        let dims = self.dims;
        obs.check_dims(dims)?;
        let kv_x = &self.policies.kv * &obs.x;
        let deviation = linalg::inf_norm(&(&obs.v - &kv_x));
        if deviation > self.settings.act_tol * (1.0 + linalg::inf_norm(&kv_x)) {
            return Err(Error::OffPolicyAction { deviation });
        }

        // Regression row: behaviour disturbance, on-policy control.
        let n_z = dims.joint();
        let mut phi = DVector::zeros(n_z);
        phi.rows_mut(0, dims.state).copy_from(&obs.x);
        phi.rows_mut(dims.state, dims.control).copy_from(&kv_x);
        phi.rows_mut(dims.state + dims.control, dims.disturbance).copy_from(&obs.d);
        let mut r = DVector::zeros(self.s.len());
        vecv_into(phi.as_slice(), r.as_mut_slice());

        // Bootstrap target: next state under the target policies.
        let mut phi_next = DVector::zeros(n_z);
        phi_next.rows_mut(0, dims.state).copy_from(&obs.x_next);
        phi_next
            .rows_mut(dims.state, dims.control)
            .copy_from(&(&self.policies.kv * &obs.x_next));
        phi_next
            .rows_mut(dims.state + dims.control, dims.disturbance)
            .copy_from(&(&self.policies.kd * &obs.x_next));
        let target = r.dot(self.xi.as_vector()) + vecv(&phi_next).dot(self.s.as_vector());
        if !target.is_finite() {
            return Err(Error::NonFinite("bootstrap target"));
        }

        // Previous rows re-targeted to the current value kernel.
        let p = value_params(&self.s, &self.policies, dims)?;
        let mut prior = self.xi.as_vector().clone();
        prior.gemv(1.0, &self.lift, &p, 1.0);

        let mut mr = DVector::zeros(r.len());
        mr.gemv(1.0, &self.m, &r, 0.0);
        let beta = self.settings.forgetting;
        let denominator = beta + r.dot(&mr);
        if !(denominator > 0.0) || !denominator.is_finite() {
            return Err(Error::GramCorrupted { denominator });
        }
        let innovation = target - r.dot(&prior);
        if !innovation.is_finite() {
            return Err(Error::NonFinite("innovation"));
        }
        let mut s_next = prior;
        s_next.axpy(innovation / denominator, &mr, 1.0);
        let s_next = SymVec::new(s_next, n_z)?;
        let policies = improve_policies(&s_next, dims)?;

        // Commit: lift += k (vecv(x+) - r lift), M -= k (M r)'.
        let mut y = DVector::zeros(dims.value_params());
        vecv_into(obs.x_next.as_slice(), y.as_mut_slice());
        let mut resid = y;
        resid.gemv_tr(-1.0, &self.lift, &r, 1.0);
        self.lift.ger(1.0 / denominator, &mr, &resid, 1.0);
        self.m.ger(-1.0 / denominator, &mr, &mr, 1.0);
        if beta != 1.0 {
            self.m /= beta;
        }
        linalg::symmetrize_in_place(&mut self.m);

        self.s = s_next;
        self.policies = policies;
        self.iteration += 1;
        Ok(UpdateInfo { innovation, denominator })
    }
}

/// Number of critic parameters for the given dimensions.
pub fn parameter_count(dims: Dims) -> usize {
    triangular(dims.joint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn scalar_sherman_morrison() {
        let mut m = DMatrix::from_element(1, 1, 2.0);
        let mut s = dvector![0.0];
        rank_one_update(&mut m, &mut s, &dvector![3.0], 1.0, 1.0).unwrap();
        assert!((m[(0, 0)] - 2.0 / 19.0).abs() < 1e-15);
        // Direct inversion: Xi' = 1/2 + 9.
        assert!((m[(0, 0)] - 1.0 / 9.5).abs() < 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_estimate() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let before = m.clone();
        let mut s = dvector![0.4, -1.1];
        let r = dvector![1.5, 2.0];
        let target = r.dot(&s);
        let innov = rank_one_update(&mut m, &mut s, &r, target, 1.0).unwrap();
        assert_eq!(innov, 0.0);
        assert_eq!(s, dvector![0.4, -1.1]);
        assert!(m != before);
    }

    #[test]
    fn corrupted_gram_is_an_error() {
        let mut m = DMatrix::from_element(1, 1, -1.0);
        let mut s = dvector![0.0];
        assert!(matches!(
            rank_one_update(&mut m, &mut s, &dvector![2.0], 1.0, 1.0),
            Err(Error::GramCorrupted { .. })
        ));
    }

    #[test]
    fn q_bar_formula() {
        assert_eq!(parameter_count(Dims::new(2, 1, 1)), 10);
        assert_eq!(parameter_count(Dims::new(4, 2, 1)), 28);
    }
}
