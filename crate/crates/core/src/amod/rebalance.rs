//! Minimal steady-state rebalancing:
//! `min sum_l T_l R_l^2  s.t.  E (R + lambda) = 0,  R >= 0`.

use nalgebra::{DMatrix, DVector};

use super::network::NetworkSpec;
use super::plant::incidence;
use crate::error::{Error, Result};

pub const KKT_TOL: f64 = 1e-8;

/// Largest KKT violations of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max(|E(R + lambda)|_inf, max(-R, 0))`.
    pub primal: f64,
    /// `|2 T R - E' nu - mu|_inf`.
    pub stationarity: f64,
    /// `max(-mu, 0)`.
    pub dual: f64,
    /// `|mu o R|_inf`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rebalancing {
    pub r_bar: DVector<f64>,
    /// Multipliers of the balance constraints.
    pub nu: DVector<f64>,
    /// Multipliers of `R >= 0`.
    pub mu: DVector<f64>,
    pub objective: f64,
    /// Active-set iterations.
    pub iterations: usize,
    pub kkt: KktResiduals,
}

pub fn rebalancing_objective(travel: &DVector<f64>, r: &DVector<f64>) -> f64 {
    travel.iter().zip(r.iter()).map(|(t, x)| t * x * x).sum()
}

/// KKT residuals of `(r, nu, mu)` for the given network.
pub fn kkt_residuals(spec: &NetworkSpec, r: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
    let e = incidence(spec.n).e;
    let travel = spec.travel_vector();
    let lambda = spec.rate_vector();
    let balance = (&e * (r + &lambda)).amax();
    let stat = 2.0 * travel.component_mul(r) - e.transpose() * nu - mu;
    KktResiduals {
        primal: balance.max((-r.min()).max(0.0)),
        stationarity: stat.amax(),
        dual: (-mu.min()).max(0.0),
        complementarity: mu.component_mul(r).amax(),
    }
}

/// Feasible start: ship each station's surplus straight to deficit stations
/// in index order.
fn greedy_start(e: &DMatrix<f64>, lambda: &DVector<f64>, n: usize) -> DVector<f64> {
    let need = -(e * lambda);
    let mut supply: Vec<f64> = need.iter().map(|b| (-b).max(0.0)).collect();
    let mut demand: Vec<f64> = need.iter().map(|b| b.max(0.0)).collect();
    let mut r = DVector::zeros(lambda.len());
    for o in 0..n {
        for dest in 0..n {
            if o == dest || supply[o] <= 0.0 || demand[dest] <= 0.0 {
                continue;
            }
            let amount = supply[o].min(demand[dest]);
            let k = super::network::link_index(n, o, dest).expect("distinct stations");
            r[k] += amount;
            supply[o] -= amount;
            demand[dest] -= amount;
        }
    }
    r
}

/// Equality-constrained minimizer over the free links, given that a feasible
/// point supported on them exists. Returns `(R, nu)`.
///
/// The weighted Laplacian `E D E'` is singular once per connected component
/// of the free links, so `nu` is pinned to zero at the first station of each
/// component and the reduced system is solved by Cholesky.
fn solve_eqp(e: &DMatrix<f64>, travel: &DVector<f64>, b: &DVector<f64>, free: &[bool]) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = e.nrows();
    let half_inv_t = DVector::from_fn(travel.len(), |i, _| if free[i] { 0.5 / travel[i] } else { 0.0 });
    let scaled = DMatrix::from_fn(n, e.ncols(), |i, j| e[(i, j)] * half_inv_t[j]);
    let lap = &scaled * e.transpose();

    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    for (k, (o, dest)) in super::network::links(n).into_iter().enumerate() {
        if free[k] {
            let (a, c) = (find(&mut root, o), find(&mut root, dest));
            root[a.max(c)] = a.min(c);
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| find(&mut root, i) != i).collect();
    let mut nu = DVector::zeros(n);
    if !kept.is_empty() {
        let reduced = DMatrix::from_fn(kept.len(), kept.len(), |i, j| lap[(kept[i], kept[j])]);
        let rhs = DVector::from_fn(kept.len(), |i, _| b[kept[i]]);
        let chol = reduced
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("rebalancing KKT system is not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        for (i, &node) in kept.iter().enumerate() {
            nu[node] = sol[i];
        }
    }
    let r = half_inv_t.component_mul(&(e.transpose() * &nu));
    Ok((r, nu))
}

/// Primal active-set solve. Links enter and leave the active set in order of
/// index when several qualify.
pub fn solve_rebalancing(spec: &NetworkSpec) -> Result<Rebalancing> {
    solve_rebalancing_with(spec, KKT_TOL, 50 * spec.link_count() + 100)
}

pub fn solve_rebalancing_with(spec: &NetworkSpec, kkt_tol: f64, max_iter: usize) -> Result<Rebalancing> {
    spec.validate()?;
    let n = spec.n;
    let m = spec.link_count();
    let e = incidence(n).e;
    let travel = spec.travel_vector();
    let lambda = spec.rate_vector();
    let b = -(&e * &lambda);
    let scale = 1.0 + lambda.amax();

    let mut r = greedy_start(&e, &lambda, n);
    if (&e * &r - &b).amax() > kkt_tol * scale {
        return Err(Error::Infeasible("no nonnegative rebalancing balances the demand".into()));
    }
    let mut free: Vec<bool> = r.iter().map(|x| *x > 0.0).collect();

    for iteration in 1..=max_iter {
        let (target, nu) = solve_eqp(&e, &travel, &b, &free)?;
        let step = &target - &r;
        if step.amax() <= 1e-12 * scale {
            let mu_all = 2.0 * travel.component_mul(&target) - e.transpose() * &nu;
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..m {
                if !free[k] && mu_all[k] < -kkt_tol && leave.is_none_or(|(_, best)| mu_all[k] < best) {
                    leave = Some((k, mu_all[k]));
                }
            }
            match leave {
                Some((k, _)) => free[k] = true,
                None => {
                    let r_final = DVector::from_fn(m, |k, _| if free[k] { target[k] } else { 0.0 });
                    let mu = DVector::from_fn(m, |k, _| if free[k] { 0.0 } else { mu_all[k] });
                    let kkt = kkt_residuals(spec, &r_final, &nu, &mu);
                    return Ok(Rebalancing {
                        objective: rebalancing_objective(&travel, &r_final),
                        r_bar: r_final,
                        nu,
                        mu,
                        iterations: iteration,
                        kkt,
                    });
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for k in 0..m {
            if free[k] && step[k] < 0.0 {
                let ratio = -r[k] / step[k];
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(k);
                }
            }
        }
        r.axpy(alpha, &step, 1.0);
        if let Some(k) = blocking {
            r[k] = 0.0;
            free[k] = false;
        }
        for k in 0..m {
            if !free[k] {
                r[k] = 0.0;
            }
        }
    }
    Err(Error::SolverStalled(max_iter))
}
