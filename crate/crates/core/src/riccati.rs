//! Model-based ground truth: Q-kernel recursion, saddle-point gains and the
//! game Riccati recursion iterated to its fixed point.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, COND_MAX, TOL_SYM};
use crate::lq::{CostSpec, Dims, PolicyPair, SystemDynamics};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Symmetric value kernel `P`, with `V(x) = x' P x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueKernel {
    p: DMatrix<f64>,
}

impl ValueKernel {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::dims("P", "square", format!("{}x{}", p.nrows(), p.ncols())));
        }
        let asym = linalg::max_asymmetry(&p);
        if asym > TOL_SYM * (1.0 + p.abs().max()) {
            return Err(Error::Asymmetric { what: "P", asymmetry: asym, tol: TOL_SYM });
        }
        Ok(ValueKernel { p: linalg::symmetrize(&p) })
    }

    pub fn zeros(n: usize) -> Self {
        ValueKernel { p: DMatrix::zeros(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.p
    }
}

/// Symmetric Q-kernel `S` over `z = (x, v, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QKernel {
    s: DMatrix<f64>,
    dims: Dims,
}

impl QKernel {
    pub fn new(s: DMatrix<f64>, dims: Dims) -> Result<Self> {
        let n = dims.joint();
        if s.shape() != (n, n) {
            return Err(Error::dims("S", format!("{n}x{n}"), format!("{:?}", s.shape())));
        }
        let asym = linalg::max_asymmetry(&s);
        if asym > TOL_SYM * (1.0 + s.abs().max()) {
            return Err(Error::Asymmetric { what: "S", asymmetry: asym, tol: TOL_SYM });
        }
        Ok(QKernel { s: linalg::symmetrize(&s), dims })
    }

    /// For matrices that are symmetric by construction, such as `unvecs` output.
    pub(crate) fn from_symmetric(s: DMatrix<f64>, dims: Dims) -> Self {
        debug_assert_eq!(s.shape(), (dims.joint(), dims.joint()));
        QKernel { s, dims }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn range(&self, which: char) -> (usize, usize) {
        let Dims { state, control, disturbance } = self.dims;
        match which {
            'x' => (0, state),
            'v' => (state, control),
            'd' => (state + control, disturbance),
            _ => unreachable!(),
        }
    }

    fn block(&self, r: char, c: char) -> DMatrix<f64> {
        let (r0, rn) = self.range(r);
        let (c0, cn) = self.range(c);
        self.s.view((r0, c0), (rn, cn)).into_owned()
    }

    pub fn xx(&self) -> DMatrix<f64> {
        self.block('x', 'x')
    }
    pub fn xv(&self) -> DMatrix<f64> {
        self.block('x', 'v')
    }
    pub fn xd(&self) -> DMatrix<f64> {
        self.block('x', 'd')
    }
    pub fn vx(&self) -> DMatrix<f64> {
        self.block('v', 'x')
    }
    pub fn vv(&self) -> DMatrix<f64> {
        self.block('v', 'v')
    }
    pub fn vd(&self) -> DMatrix<f64> {
        self.block('v', 'd')
    }
    pub fn dx(&self) -> DMatrix<f64> {
        self.block('d', 'x')
    }
    pub fn dv(&self) -> DMatrix<f64> {
        self.block('d', 'v')
    }
    pub fn dd(&self) -> DMatrix<f64> {
        self.block('d', 'd')
    }
}

/// `G = blkdiag(Rx, Rv, -gamma^2 I)`.
pub fn g_matrix(cost: &CostSpec, dims: Dims) -> QKernel {
    let n = dims.joint();
    let mut g = DMatrix::zeros(n, n);
    g.view_mut((0, 0), (dims.state, dims.state)).copy_from(cost.rx());
    g.view_mut((dims.state, dims.state), (dims.control, dims.control))
        .copy_from(cost.rv());
    let g2 = cost.gamma() * cost.gamma();
    let off = dims.state + dims.control;
    for k in 0..dims.disturbance {
        g[(off + k, off + k)] = -g2;
    }
    QKernel { s: g, dims }
}

/// `G + [A B L]' P [A B L]`, the Q-kernel whose value at the next state is `P`.
pub fn bellman_s_update(dyn_: &SystemDynamics, cost: &CostSpec, p: &ValueKernel) -> Result<QKernel> {
    let dims = dyn_.dims();
    cost.check_dims(dims)?;
    if p.matrix().nrows() != dims.state {
        return Err(Error::dims("P", dims.state, p.matrix().nrows()));
    }
    let h = dyn_.joint_map();
    let g = g_matrix(cost, dims);
    let s = g.s + h.transpose() * p.matrix() * h;
    Ok(QKernel { s: linalg::symmetrize(&s), dims })
}

fn inverse_of(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    linalg::sym_inverse(m, COND_MAX).map_err(|cond| Error::SaddleIllPosed {
        reason: format!("{what} has condition number {cond:e}"),
    })
}

/// Saddle-point gains of `z' S z`: the stationary `(v, d)` as linear functions of `x`.
pub fn gains_from_s(s: &QKernel) -> Result<PolicyPair> {
    let dims = s.dims;
    let (m1, m2, m3) = (dims.state, dims.control, dims.disturbance);
    let svv = s.s.view((m1, m1), (m2, m2)).into_owned();
    if nalgebra::Cholesky::new(svv.clone()).is_none() {
        return Err(Error::SaddleIllPosed {
            reason: format!("S_vv not positive definite (min eigenvalue {:e})", linalg::min_eigenvalue(&svv)),
        });
    }
    let suu = s.s.view((m1, m1), (m2 + m3, m2 + m3)).into_owned();
    let what = "[S_vv S_vd; S_dv S_dd]";
    let suu_inv = suu.clone().try_inverse().ok_or_else(|| Error::SaddleIllPosed {
        reason: format!("{what} is singular"),
    })?;
    let cond = linalg::norm_1(&suu) * linalg::norm_1(&suu_inv);
    if !(cond <= COND_MAX) {
        return Err(Error::SaddleIllPosed {
            reason: format!("{what} has condition number {cond:e}"),
        });
    }
    let k = -(suu_inv * s.s.view((m1, 0), (m2 + m3, m1)));
    Ok(PolicyPair {
        kv: k.rows(0, m2).into_owned(),
        kd: k.rows(m2, m3).into_owned(),
    })
}

/// Minimum eigenvalue of the controller Schur complement and maximum eigenvalue
/// of the disturbance Schur complement. A well-posed saddle has the first
/// positive and the second negative.
pub fn saddle_margins(s: &QKernel) -> Result<(f64, f64)> {
    let (svv, svd, sdv, sdd) = (s.vv(), s.vd(), s.dv(), s.dd());
    let sdd_inv = inverse_of(&sdd, "S_dd")?;
    let svv_inv = inverse_of(&svv, "S_vv")?;
    let schur_v = &svv - &svd * &sdd_inv * &sdv;
    let schur_d = &sdd - &sdv * &svv_inv * &svd;
    Ok((linalg::min_eigenvalue(&schur_v), linalg::max_eigenvalue(&schur_d)))
}

/// `P = T' S T` with `T = [I; Kv; Kd]`.
pub fn p_from_s(s: &QKernel, policies: &PolicyPair) -> Result<ValueKernel> {
    policies.check_dims(s.dims)?;
    let t = policies.lift();
    let p = t.transpose() * &s.s * t;
    Ok(ValueKernel { p: linalg::symmetrize(&p) })
}

/// One step of the game Riccati recursion.
pub fn riccati_step(dyn_: &SystemDynamics, cost: &CostSpec, p: &ValueKernel) -> Result<ValueKernel> {
    let dims = dyn_.dims();
    cost.check_dims(dims)?;
    let pm = p.matrix();
    if pm.nrows() != dims.state {
        return Err(Error::dims("P", dims.state, pm.nrows()));
    }
    let (a, b, l) = (dyn_.a(), dyn_.b(), dyn_.l());
    let g2 = cost.gamma() * cost.gamma();
    let ltpl = l.transpose() * pm * l;
    let margin = DMatrix::identity(dims.disturbance, dims.disturbance) * g2 - &ltpl;
    let min_margin = linalg::min_eigenvalue(&margin);
    if !(min_margin > 0.0) {
        return Err(Error::GammaTooSmall {
            gamma: cost.gamma(),
            min_eigenvalue: min_margin,
        });
    }
    let bl = linalg::hstack(&[b, l]);
    let block = {
        let mut m = bl.transpose() * pm * &bl;
        let mut vv = m.view_mut((0, 0), (dims.control, dims.control));
        vv += cost.rv();
        let off = dims.control;
        for k in 0..dims.disturbance {
            m[(off + k, off + k)] -= g2;
        }
        m
    };
    let block_inv = linalg::sym_inverse(&block, COND_MAX).map_err(|condition| Error::SingularBlock { condition })?;
    let cross = a.transpose() * pm * &bl;
    let next = cost.rx() + a.transpose() * pm * a - &cross * block_inv * cross.transpose();
    if !linalg::all_finite(&next) {
        return Err(Error::NonFinite("Riccati iterate"));
    }
    Ok(ValueKernel { p: linalg::symmetrize(&next) })
}

/// Fixed point of the game Riccati recursion started from `P = 0`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p_star: ValueKernel,
    pub s_star: QKernel,
    pub policies_star: PolicyPair,
    /// Index of the iterate accepted as the fixed point.
    pub iterations: usize,
    /// `|riccati_step(P*) - P*|_2`.
    pub residual: f64,
    /// `|P^{k+1} - P^k|_2` for every step taken.
    pub deltas: Vec<f64>,
}

pub fn solve_riccati(dyn_: &SystemDynamics, cost: &CostSpec, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let dims = dyn_.dims();
    let mut p = ValueKernel::zeros(dims.state);
    let mut deltas = Vec::new();
    for k in 1..=max_iter {
        let next = riccati_step(dyn_, cost, &p)?;
        let delta = linalg::sym_spectral_norm(&(next.matrix() - p.matrix()));
        deltas.push(delta);
        p = next;
        if delta <= tol {
            let s_star = bellman_s_update(dyn_, cost, &p)?;
            let policies_star = gains_from_s(&s_star)?;
            let residual = linalg::sym_spectral_norm(&(riccati_step(dyn_, cost, &p)?.matrix() - p.matrix()));
            return Ok(RiccatiSolution {
                p_star: p,
                s_star,
                policies_star,
                iterations: k - 1,
                residual,
                deltas,
            });
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        last_delta: deltas.last().copied().unwrap_or(f64::NAN),
    })
}

/// Doubles `gamma` from the cost's value until the game has a well-posed
/// fixed point. Returns the first feasible value found, or `None` after
/// `max_doublings`.
pub fn suggest_gamma(dyn_: &SystemDynamics, cost: &CostSpec, max_doublings: usize) -> Option<f64> {
    let mut gamma = cost.gamma();
    for _ in 0..=max_doublings {
        if let Ok(c) = cost.with_gamma(gamma) {
            if let Ok(sol) = solve_riccati(dyn_, &c, DEFAULT_TOL.max(1e-8), DEFAULT_MAX_ITER) {
                if let Ok((lo, hi)) = saddle_margins(&sol.s_star) {
                    if lo > 0.0 && hi < 0.0 {
                        return Some(gamma);
                    }
                }
            }
        }
        gamma *= 2.0;
    }
    None
}
