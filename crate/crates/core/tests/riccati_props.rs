mod common;

use common::{random_instance, rel_err};
use hinfq::lq::{self, CostSpec, DisturbanceSource, Dims, PolicyPair, SystemDynamics};
use hinfq::riccati::{self, QKernel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..5, 1usize..3, 1usize..3).prop_map(|(a, b, c)| Dims::new(a, b, c))
}

/// Value iteration on the Q-kernel: `S = G + H'PH`, saddle gains from an LU
/// solve of the `(v, d)` block, then `P = T'ST`.
fn kernel_iteration(dyn_: &SystemDynamics, cost: &CostSpec, tol: f64) -> DMatrix<f64> {
    let dims = dyn_.dims();
    let (m1, m2, m3) = (dims.state, dims.control, dims.disturbance);
    let n = dims.joint();
    let h = {
        let mut h = DMatrix::zeros(m1, n);
        h.columns_mut(0, m1).copy_from(dyn_.a());
        h.columns_mut(m1, m2).copy_from(dyn_.b());
        h.columns_mut(m1 + m2, m3).copy_from(dyn_.l());
        h
    };
    let mut g = DMatrix::zeros(n, n);
    g.view_mut((0, 0), (m1, m1)).copy_from(cost.rx());
    g.view_mut((m1, m1), (m2, m2)).copy_from(cost.rv());
    for k in 0..m3 {
        g[(m1 + m2 + k, m1 + m2 + k)] = -cost.gamma() * cost.gamma();
    }
    let mut p = DMatrix::zeros(m1, m1);
    for _ in 0..200_000 {
        let s = &g + h.transpose() * &p * &h;
        let suu = s.view((m1, m1), (m2 + m3, m2 + m3)).into_owned();
        let sux = s.view((m1, 0), (m2 + m3, m1)).into_owned();
        let k = -suu.lu().solve(&sux).expect("invertible block");
        let mut t = DMatrix::zeros(n, m1);
        t.view_mut((0, 0), (m1, m1)).fill_with_identity();
        t.view_mut((m1, 0), (m2 + m3, m1)).copy_from(&k);
        let next = t.transpose() * &s * &t;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= tol {
            return p;
        }
    }
    panic!("kernel iteration did not converge");
}

#[test]
fn matches_kernel_iteration_oracle() {
    for dims in [Dims::new(1, 1, 1), Dims::new(2, 1, 1), Dims::new(3, 2, 1), Dims::new(4, 2, 2)] {
        for seed in 0..5 {
            let (dyn_, cost) = random_instance(dims, seed);
            let sol = riccati::solve_riccati(&dyn_, &cost, 1e-13, 100_000).unwrap();
            let oracle = kernel_iteration(&dyn_, &cost, 1e-13);
            let err = rel_err(sol.p_star.matrix(), &oracle);
            assert!(err <= 1e-9, "{dims:?}/{seed}: {err:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_is_linear(dims in dims_strategy(), seed in any::<u64>(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
        let (dyn_, _) = random_instance(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut vec = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let (x1, v1, d1) = (vec(dims.state), vec(dims.control), vec(dims.disturbance));
        let (x2, v2, d2) = (vec(dims.state), vec(dims.control), vec(dims.disturbance));
        let lhs = lq::step(&dyn_, &(&x1 * alpha + &x2 * beta), &(&v1 * alpha + &v2 * beta), &(&d1 * alpha + &d2 * beta)).unwrap();
        let rhs = lq::step(&dyn_, &x1, &v1, &d1).unwrap() * alpha + lq::step(&dyn_, &x2, &v2, &d2).unwrap() * beta;
        prop_assert!((&lhs - &rhs).amax() <= 1e-12 * (1.0 + rhs.amax()));
    }

    #[test]
    fn stage_cost_is_quadratic(dims in dims_strategy(), seed in any::<u64>(), alpha in -4.0..4.0f64) {
        let (_, cost) = random_instance(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let mut vec = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let (x, v, d) = (vec(dims.state), vec(dims.control), vec(dims.disturbance));
        let c = lq::stage_cost(&cost, &x, &v, &d).unwrap();
        let scaled = lq::stage_cost(&cost, &(&x * alpha), &(&v * alpha), &(&d * alpha)).unwrap();
        let scale = 1.0 + (alpha * alpha) * (x.norm_squared() + v.norm_squared() + cost.gamma().powi(2) * d.norm_squared());
        prop_assert!((scaled - alpha * alpha * c).abs() <= 1e-12 * scale);
    }

    #[test]
    fn policy_rollout_follows_closed_loop(dims in dims_strategy(), seed in any::<u64>()) {
        let (dyn_, cost) = random_instance(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let pol = PolicyPair {
            kv: DMatrix::from_fn(dims.control, dims.state, |_, _| rng.random_range(-0.3..0.3)),
            kd: DMatrix::from_fn(dims.disturbance, dims.state, |_, _| rng.random_range(-0.3..0.3)),
        };
        let x0 = DVector::from_fn(dims.state, |_, _| rng.random_range(-1.0..1.0));
        let traj = lq::rollout(&dyn_, &cost, &pol, &x0, DisturbanceSource::Policy, 25).unwrap();
        let a_cl = lq::closed_loop_matrix(&dyn_, &pol).unwrap();
        let mut x = x0;
        for tr in &traj.transitions {
            prop_assert!((&tr.x - &x).amax() <= 1e-12 * (1.0 + x.amax()));
            x = &a_cl * x;
        }
    }

    #[test]
    fn fixed_point_structure(dims in dims_strategy(), seed in any::<u64>()) {
        let (dyn_, cost) = random_instance(dims, seed);
        let tol = 1e-10;
        let sol = riccati::solve_riccati(&dyn_, &cost, tol, 100_000).unwrap();
        let p_again = riccati::p_from_s(&sol.s_star, &sol.policies_star).unwrap();
        prop_assert!(hinfq::linalg::sym_spectral_norm(&(p_again.matrix() - sol.p_star.matrix())) <= 10.0 * tol);
        let (lo, hi) = riccati::saddle_margins(&sol.s_star).unwrap();
        prop_assert!(lo > 0.0 && hi < 0.0, "margins {lo} {hi}");
        prop_assert!(lq::closed_loop_spectral_radius(&dyn_, &sol.policies_star).unwrap() < 1.0);
        let a_v = lq::control_loop_matrix(&dyn_, &sol.policies_star.kv).unwrap();
        prop_assert!(hinfq::linalg::spectral_radius(&a_v) < 1.0);
        let n = sol.deltas.len();
        if n > 11 {
            let tail = &sol.deltas[n - 11..];
            prop_assert!(tail[10] < tail[0], "{tail:?}");
        }
    }

    #[test]
    fn scalar_state_tail_is_strictly_decreasing(control in 1usize..3, disturbance in 1usize..3, seed in any::<u64>()) {
        let (dyn_, cost) = random_instance(Dims::new(1, control, disturbance), seed);
        let sol = riccati::solve_riccati(&dyn_, &cost, 1e-10, 100_000).unwrap();
        let n = sol.deltas.len();
        let tail = &sol.deltas[n.saturating_sub(11)..];
        prop_assert!(tail.windows(2).all(|w| w[1] < w[0]), "{tail:?}");
    }

    #[test]
    fn larger_gamma_never_raises_the_value(dims in dims_strategy(), seed in any::<u64>()) {
        let (dyn_, cost) = random_instance(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let probes: Vec<DVector<f64>> = (0..10).map(|_| DVector::from_fn(dims.state, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mut previous: Option<Vec<f64>> = None;
        for factor in [1.0, 1.25, 1.5, 2.0, 4.0, 16.0] {
            let c = cost.with_gamma(cost.gamma() * factor).unwrap();
            let p = riccati::solve_riccati(&dyn_, &c, 1e-12, 100_000).unwrap().p_star;
            let values: Vec<f64> = probes.iter().map(|x| x.dot(&(p.matrix() * x))).collect();
            if let Some(prev) = &previous {
                for (now, before) in values.iter().zip(prev) {
                    prop_assert!(*now <= before + 1e-9 * (1.0 + before.abs()));
                }
            }
            previous = Some(values);
        }
    }
}

#[test]
fn gains_solve_the_stationarity_conditions() {
    let (dyn_, cost) = random_instance(Dims::new(4, 2, 2), 3);
    let sol = riccati::solve_riccati(&dyn_, &cost, 1e-12, 100_000).unwrap();
    let s = QKernel::new(sol.s_star.matrix().clone(), dyn_.dims()).unwrap();
    let pol = &sol.policies_star;
    // d/dv and d/dd of z'Sz vanish along z = T x.
    let grad_v = s.vx() + s.vv() * &pol.kv + s.vd() * &pol.kd;
    let grad_d = s.dx() + s.dv() * &pol.kv + s.dd() * &pol.kd;
    assert!(grad_v.amax() <= 1e-9 && grad_d.amax() <= 1e-9);
}
