use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::network::{links, NetworkSpec};
use crate::error::{Error, Result};
use crate::lq::{CostSpec, Dims, SystemDynamics};

/// Link-to-node incidence matrices, `n x m_links`.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub e_in: DMatrix<f64>,
    pub e_out: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

pub fn incidence(n: usize) -> Incidence {
    let ls = links(n);
    let mut e_in = DMatrix::zeros(n, ls.len());
    let mut e_out = DMatrix::zeros(n, ls.len());
    for (k, (r, s)) in ls.into_iter().enumerate() {
        e_out[(r, k)] = 1.0;
        e_in[(s, k)] = 1.0;
    }
    let e = &e_in - &e_out;
    Incidence { e_in, e_out, e }
}

/// AMoD plant: state `x = (w, p, g)`, control `v = (U, R)`, disturbance `d`.
///
/// `w` is the per-link customer queue, `p` the idle vehicles per station,
/// `g` the vehicles travelling per link, `U` customer-carrying and `R`
/// rebalancing dispatches per link, `d` customer arrivals per link.
#[derive(Debug, Clone)]
pub struct AmodPlant {
    n: usize,
    dynamics: SystemDynamics,
    incidence: Incidence,
    travel: DVector<f64>,
}

impl AmodPlant {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn link_count(&self) -> usize {
        self.travel.len()
    }

    pub fn dynamics(&self) -> &SystemDynamics {
        &self.dynamics
    }

    pub fn dims(&self) -> Dims {
        self.dynamics.dims()
    }

    pub fn incidence(&self) -> &Incidence {
        &self.incidence
    }

    pub fn travel(&self) -> &DVector<f64> {
        &self.travel
    }

    pub fn w_range(&self) -> Range<usize> {
        0..self.link_count()
    }

    pub fn p_range(&self) -> Range<usize> {
        let m = self.link_count();
        m..m + self.n
    }

    pub fn g_range(&self) -> Range<usize> {
        let m = self.link_count();
        m + self.n..2 * m + self.n
    }

    pub fn u_range(&self) -> Range<usize> {
        0..self.link_count()
    }

    pub fn r_range(&self) -> Range<usize> {
        let m = self.link_count();
        m..2 * m
    }

    pub fn pack_state(&self, w: &DVector<f64>, p: &DVector<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.link_count();
        if w.len() != m || g.len() != m || p.len() != self.n {
            return Err(Error::dims("AMoD state blocks", format!("({m}, {}, {m})", self.n), format!("({}, {}, {})", w.len(), p.len(), g.len())));
        }
        let mut x = DVector::zeros(self.dims().state);
        x.rows_range_mut(self.w_range()).copy_from(w);
        x.rows_range_mut(self.p_range()).copy_from(p);
        x.rows_range_mut(self.g_range()).copy_from(g);
        Ok(x)
    }

    pub fn unpack_state(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        if x.len() != self.dims().state {
            return Err(Error::dims("AMoD state", self.dims().state, x.len()));
        }
        Ok((
            x.rows_range(self.w_range()).into_owned(),
            x.rows_range(self.p_range()).into_owned(),
            x.rows_range(self.g_range()).into_owned(),
        ))
    }

    pub fn pack_control(&self, u: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.link_count();
        if u.len() != m || r.len() != m {
            return Err(Error::dims("AMoD control blocks", m, u.len().max(r.len())));
        }
        let mut v = DVector::zeros(2 * m);
        v.rows_range_mut(self.u_range()).copy_from(u);
        v.rows_range_mut(self.r_range()).copy_from(r);
        Ok(v)
    }

    pub fn unpack_control(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if v.len() != self.dims().control {
            return Err(Error::dims("AMoD control", self.dims().control, v.len()));
        }
        Ok((v.rows_range(self.u_range()).into_owned(), v.rows_range(self.r_range()).into_owned()))
    }

    /// Vehicles in the system, `1'p + 1'g`.
    pub fn fleet(&self, x: &DVector<f64>) -> f64 {
        x.rows_range(self.p_range()).sum() + x.rows_range(self.g_range()).sum()
    }

    /// Weights `c` with `fleet(x) = c'x`. Since `c'A = c'` and `c'B = 0`,
    /// every closed loop `A + B K` has `c` as a left eigenvector for 1.
    pub fn fleet_weights(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dims().state);
        c.rows_range_mut(self.p_range()).fill(1.0);
        c.rows_range_mut(self.g_range()).fill(1.0);
        c
    }

    /// Spectral radius of `a_cl` restricted to the invariant subspace
    /// `{x : c'x = 0}` of fleet-preserving perturbations.
    pub fn fleet_complement_radius(&self, a_cl: &DMatrix<f64>) -> Result<f64> {
        let m1 = self.dims().state;
        if a_cl.shape() != (m1, m1) {
            return Err(Error::dims("closed-loop matrix", format!("{m1}x{m1}"), format!("{:?}", a_cl.shape())));
        }
        let c = self.fleet_weights();
        let drift = (a_cl.tr_mul(&c) - &c).amax();
        if drift > 1e-9 * (1.0 + a_cl.amax()) {
            return Err(Error::InvalidArgument(format!("closed loop does not conserve the fleet (drift {drift:e})")));
        }
        // Householder reflector mapping c/|c| to e_0; its other columns span c-perp.
        let mut u = c.normalize();
        u[0] -= 1.0;
        let h = DMatrix::identity(m1, m1) - (&u * u.transpose()) * (2.0 / u.norm_squared());
        let q = h.columns(1, m1 - 1);
        Ok(crate::linalg::spectral_radius(&(q.transpose() * a_cl * q)))
    }
}

/// Global linear system of the network.
pub fn build_dynamics(spec: &NetworkSpec) -> Result<AmodPlant> {
    spec.validate()?;
    let n = spec.n;
    let m = spec.link_count();
    let inc = incidence(n);
    let travel = spec.travel_vector();
    let inv_t = DMatrix::from_diagonal(&travel.map(|t| 1.0 / t));
    let m1 = 2 * m + n;

    let mut a = DMatrix::identity(m1, m1);
    a.view_mut((m, m + n), (n, m)).copy_from(&(&inc.e_in * &inv_t));
    let mut gg = a.view_mut((m + n, m + n), (m, m));
    gg -= &inv_t;

    let mut b = DMatrix::zeros(m1, 2 * m);
    let eye = DMatrix::<f64>::identity(m, m);
    b.view_mut((0, 0), (m, m)).copy_from(&(-&eye));
    b.view_mut((m, 0), (n, m)).copy_from(&(-&inc.e_out));
    b.view_mut((m, m), (n, m)).copy_from(&(-&inc.e_out));
    b.view_mut((m + n, 0), (m, m)).copy_from(&eye);
    b.view_mut((m + n, m), (m, m)).copy_from(&eye);

    let mut l = DMatrix::zeros(m1, m);
    l.view_mut((0, 0), (m, m)).copy_from(&eye);

    Ok(AmodPlant {
        n,
        dynamics: SystemDynamics::new(a, b, l)?,
        incidence: inc,
        travel,
    })
}

/// One step of the per-link update equations, without the matrix form.
pub fn amod_step_componentwise(
    spec: &NetworkSpec,
    w: &DVector<f64>,
    p: &DVector<f64>,
    g: &DVector<f64>,
    u: &DVector<f64>,
    r: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = spec.n;
    let m = spec.link_count();
    for (name, v, len) in [("w", w, m), ("p", p, n), ("g", g, m), ("U", u, m), ("R", r, m), ("d", d, m)] {
        if v.len() != len {
            return Err(Error::dims(name, len, v.len()));
        }
    }
    let travel = spec.travel_vector();
    let w_next = w + d - u;
    let mut p_next = p.clone();
    let mut g_next = DVector::zeros(m);
    for (k, (o, dest)) in links(n).into_iter().enumerate() {
        let discharge = g[k] / travel[k];
        p_next[o] -= u[k] + r[k];
        p_next[dest] += discharge;
        g_next[k] = g[k] - discharge + u[k] + r[k];
    }
    Ok((w_next, p_next, g_next))
}

/// Stage cost: queues weighted by their arrival rates, dispatches by `rho T`.
pub fn cost_from_network(spec: &NetworkSpec, rho: f64, gamma: f64) -> Result<CostSpec> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    spec.validate()?;
    let n = spec.n;
    let m = spec.link_count();
    let m1 = 2 * m + n;
    let mut rx = DMatrix::zeros(m1, m1);
    for (k, lam) in spec.rate_vector().iter().enumerate() {
        rx[(k, k)] = *lam;
    }
    let travel = spec.travel_vector();
    let rv = DMatrix::from_diagonal(&DVector::from_fn(2 * m, |i, _| rho * travel[i % m]));
    CostSpec::new(rx, rv, gamma)
}

/// Operating point around which the plant is regulated.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub w_bar: DVector<f64>,
    pub p_bar: DVector<f64>,
    pub g_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub r_bar: DVector<f64>,
    /// `T'(lambda + R_bar)`, the vehicles on the road at equilibrium.
    pub fleet_lower_bound: f64,
}

/// Equilibrium for the given rebalancing flow. `fleet_size` sets `p_bar`
/// to an even split of the vehicles not on the road; without it each
/// station holds one idle vehicle.
pub fn equilibrium(spec: &NetworkSpec, r_bar: &DVector<f64>, fleet_size: Option<f64>, kkt_tol: f64) -> Result<Equilibrium> {
    spec.validate()?;
    let m = spec.link_count();
    if r_bar.len() != m {
        return Err(Error::dims("R_bar", m, r_bar.len()));
    }
    let lambda = spec.rate_vector();
    let flow = &lambda + r_bar;
    let scale = 1.0 + flow.amax();
    let balance = (&incidence(spec.n).e * &flow).amax();
    if balance > kkt_tol * scale || r_bar.min() < -kkt_tol * scale {
        return Err(Error::Infeasible(format!(
            "R_bar does not balance the network (residual {balance:e}, min {:e})",
            r_bar.min()
        )));
    }
    let travel = spec.travel_vector();
    let g_bar = travel.component_mul(&flow);
    let lower = travel.dot(&flow);
    let n = spec.n as f64;
    let p_bar = match fleet_size {
        Some(f) if f < lower => {
            return Err(Error::Infeasible(format!("fleet size {f} is below the equilibrium lower bound {lower}")));
        }
        Some(f) => DVector::from_element(spec.n, (f - lower) / n),
        None => DVector::from_element(spec.n, 1.0),
    };
    Ok(Equilibrium {
        w_bar: DVector::zeros(m),
        p_bar,
        g_bar,
        u_bar: lambda,
        r_bar: r_bar.clone(),
        fleet_lower_bound: lower,
    })
}

impl Equilibrium {
    /// Holds `level` customers in every link queue instead of none.
    pub fn with_queue_target(mut self, level: f64) -> Result<Self> {
        if !(level.is_finite() && level >= 0.0) {
            return Err(Error::InvalidArgument(format!("queue target must be nonnegative, got {level}")));
        }
        self.w_bar.fill(level);
        Ok(self)
    }

    pub fn state(&self, plant: &AmodPlant) -> Result<DVector<f64>> {
        plant.pack_state(&self.w_bar, &self.p_bar, &self.g_bar)
    }

    pub fn control(&self, plant: &AmodPlant) -> Result<DVector<f64>> {
        plant.pack_control(&self.u_bar, &self.r_bar)
    }

    /// The nominal disturbance, equal to the arrival rates.
    pub fn disturbance(&self) -> &DVector<f64> {
        &self.u_bar
    }

    /// `(x - x_bar, v - v_bar, d - lambda)`.
    pub fn shift(
        &self,
        plant: &AmodPlant,
        x: &DVector<f64>,
        v: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (xb, vb) = (self.state(plant)?, self.control(plant)?);
        check_triple(plant, x, v, d)?;
        Ok((x - xb, v - vb, d - self.disturbance()))
    }

    pub fn unshift(
        &self,
        plant: &AmodPlant,
        x: &DVector<f64>,
        v: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (xb, vb) = (self.state(plant)?, self.control(plant)?);
        check_triple(plant, x, v, d)?;
        Ok((x + xb, v + vb, d + self.disturbance()))
    }
}

fn check_triple(plant: &AmodPlant, x: &DVector<f64>, v: &DVector<f64>, d: &DVector<f64>) -> Result<()> {
    let dims = plant.dims();
    if x.len() != dims.state {
        return Err(Error::dims("x", dims.state, x.len()));
    }
    if v.len() != dims.control {
        return Err(Error::dims("v", dims.control, v.len()));
    }
    if d.len() != dims.disturbance {
        return Err(Error::dims("d", dims.disturbance, d.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fleet_mode_is_split_off() {
        let mut spec = NetworkSpec::uniform(3, 2.0, 1.0).unwrap();
        spec.travel_times[0][2] = 3.0;
        let plant = build_dynamics(&spec).unwrap();
        let dyn_ = plant.dynamics();
        let dims = plant.dims();
        let k = DMatrix::from_fn(dims.control, dims.state, |i, j| 0.05 * (((3 * i + 7 * j) % 11) as f64 - 5.0));
        let a_cl = dyn_.a() + dyn_.b() * &k;
        let c = plant.fleet_weights();
        assert_eq!((dyn_.b().tr_mul(&c)).amax(), 0.0);
        let full: Vec<f64> = {
            let mut v: Vec<f64> = a_cl.complex_eigenvalues().iter().map(|z| z.norm()).collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v
        };
        let reduced = plant.fleet_complement_radius(&a_cl).unwrap();
        let one = full.iter().position(|x| (x - 1.0).abs() < 1e-9).expect("fleet eigenvalue");
        let rest = full.iter().enumerate().filter(|(i, _)| *i != one).map(|(_, x)| *x).fold(0.0, f64::max);
        assert!((reduced - rest).abs() < 1e-9, "{reduced} vs {rest}");
        assert!(plant.fleet_complement_radius(&DMatrix::zeros(dims.state, dims.state)).is_err());
    }
    use crate::lq;
    use nalgebra::dvector;

    #[test]
    fn two_node_incidence() {
        let inc = incidence(2);
        assert_eq!(inc.e_out, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(inc.e_in, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(inc.e, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let inc6 = incidence(6);
        assert_eq!(inc6.e.shape(), (6, 30));
        for c in 0..30 {
            assert_eq!(inc6.e.column(c).sum(), 0.0);
            assert_eq!(inc6.e_in.column(c).sum(), 1.0);
            assert_eq!(inc6.e_out.column(c).sum(), 1.0);
        }
    }

    #[test]
    fn dimensions() {
        let plant = build_dynamics(&NetworkSpec::uniform(2, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(plant.dims(), Dims::new(6, 4, 2));
        let plant = build_dynamics(&NetworkSpec::uniform(6, 2.0, 1.0).unwrap()).unwrap();
        let dims = plant.dims();
        assert_eq!(dims, Dims::new(66, 60, 30));
        assert_eq!(dims.q_bar(), 12246);
        assert_eq!(dims.value_params(), 2211);
        assert_eq!(dims.control * dims.state, 3960);
        assert_eq!(dims.disturbance * dims.state, 1980);
    }

    #[test]
    fn unit_travel_time_discharges_links() {
        let spec = NetworkSpec::uniform(3, 1.0, 0.0).unwrap();
        let w = DVector::from_fn(6, |i, _| i as f64);
        let p = dvector![1.0, 2.0, 3.0];
        let g = DVector::from_fn(6, |i, _| 1.0 + i as f64);
        let z = DVector::zeros(6);
        let (w2, p2, g2) = amod_step_componentwise(&spec, &w, &p, &g, &z, &z, &z).unwrap();
        assert_eq!(w2, w);
        assert_eq!(g2, DVector::zeros(6));
        let inflow = &incidence(3).e_in * &g;
        assert_eq!(p2, &p + inflow);
    }

    #[test]
    fn cost_construction() {
        let spec = NetworkSpec::uniform(2, 1.0, 1.0).unwrap();
        let cost = cost_from_network(&spec, 0.05, 0.1).unwrap();
        assert_eq!(cost.rx(), &DMatrix::from_diagonal(&dvector![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(cost.rv(), &(DMatrix::identity(4, 4) * 0.05));
        assert_eq!(cost.gamma(), 0.1);
        assert!(cost_from_network(&spec, 0.0, 0.1).is_err());
    }

    #[test]
    fn two_node_equilibrium() {
        let spec = NetworkSpec::from_link_vectors(2, &dvector![1.0, 1.0], &dvector![2.0, 0.0]).unwrap();
        let eq = equilibrium(&spec, &dvector![0.0, 2.0], None, 1e-8).unwrap();
        assert_eq!(eq.g_bar, dvector![2.0, 2.0]);
        assert_eq!(eq.fleet_lower_bound, 4.0);
        assert!(equilibrium(&spec, &dvector![0.0, 0.0], None, 1e-8).is_err());
        let zero = NetworkSpec::uniform(2, 1.0, 0.0).unwrap();
        let eq0 = equilibrium(&zero, &DVector::zeros(2), Some(10.0), 1e-8).unwrap();
        assert_eq!(eq0.g_bar, DVector::zeros(2));
        assert_eq!(eq0.fleet_lower_bound, 0.0);
        assert_eq!(eq0.p_bar, dvector![5.0, 5.0]);
    }

    #[test]
    fn equilibrium_shift_is_zero() {
        let spec = NetworkSpec::from_link_vectors(2, &dvector![1.0, 3.0], &dvector![2.0, 0.0]).unwrap();
        let plant = build_dynamics(&spec).unwrap();
        let eq = equilibrium(&spec, &dvector![0.0, 2.0], None, 1e-8).unwrap();
        let (x, v, d) = (eq.state(&plant).unwrap(), eq.control(&plant).unwrap(), eq.disturbance().clone());
        let (xs, vs, ds) = eq.shift(&plant, &x, &v, &d).unwrap();
        assert!(xs.amax() == 0.0 && vs.amax() == 0.0 && ds.amax() == 0.0);
        let next = lq::step(plant.dynamics(), &x, &v, &d).unwrap();
        assert!((next - x).amax() <= 1e-12);
    }
}
