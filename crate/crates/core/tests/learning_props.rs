mod common;

use common::random_instance;
use hinfq::lq::{Dims, PolicyPair};
use hinfq::qlearn::{self, critic, param, CriticState, Environment, LearnerConfig, LinearDisturbance, LinearEnv, SymVec};
use hinfq::riccati::{self, QKernel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dims() -> impl Strategy<Value = Dims> {
    (1usize..4, 1usize..3, 1usize..3)
        .prop_filter("q_bar <= 28", |(a, b, c)| a + b + c <= 6)
        .prop_map(|(a, b, c)| Dims::new(a, b, c))
}

fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    // A P = Q R with column pivoting.
    let qr = a.clone().col_piv_qr();
    let mut x = qr.r().solve_upper_triangular(&(qr.q().transpose() * b)).expect("full column rank");
    qr.p().inv_permute_rows(&mut x);
    x
}

fn append_row(m: &mut DMatrix<f64>, row: &DVector<f64>) {
    let r = m.nrows();
    *m = m.clone().insert_row(r, 0.0);
    m.set_row(r, &row.transpose());
}

struct Run {
    states: Vec<CriticState>,
    psi: DMatrix<f64>,
    xplus: DMatrix<f64>,
}

/// Seeds a critic on a probing batch, then applies `steps` on-policy updates
/// with noisy disturbances, recording every regression row alongside.
fn recorded_run(dims: Dims, seed: u64, steps: usize) -> Run {
    let (dyn_, cost) = random_instance(dims, seed);
    let mut env = LinearEnv::new(dyn_, DVector::from_element(dims.state, 1.0), LinearDisturbance::Adversarial).unwrap();
    let zeros = PolicyPair::zeros(dims);
    let batch = critic::collect_init(
        &mut env,
        &zeros,
        &DMatrix::identity(dims.control, dims.control),
        Some(&DMatrix::identity(dims.disturbance, dims.disturbance)),
        dims.q_bar() + 4,
        seed,
    )
    .unwrap();
    let mut state = critic::init_solve(&batch, &cost, &SymVec::zeros(dims.joint()), &zeros, Default::default()).unwrap();
    let (mut psi, mut xplus) = (batch.psi0.clone(), batch.xplus0.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut states = vec![state.clone()];
    for _ in 0..steps {
        let x = env.state();
        let v = &state.policies().kv * &x;
        let noise = DVector::from_fn(dims.disturbance, |_, _| rng.random_range(-1.0..1.0));
        let d = &state.policies().kd * &x + noise;
        let obs = env.step(&v, &d).unwrap();
        let mut z = DVector::zeros(dims.joint());
        z.rows_mut(0, dims.state).copy_from(&obs.x);
        z.rows_mut(dims.state, dims.control).copy_from(&v);
        z.rows_mut(dims.state + dims.control, dims.disturbance).copy_from(&obs.d);
        append_row(&mut psi, &param::vecv(&z));
        append_row(&mut xplus, &param::vecv(&obs.x_next));
        state.update(&obs).unwrap();
        states.push(state.clone());
    }
    Run { states, psi, xplus }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadratic_form_matches_double_sum(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let s = &a + a.transpose();
        let z = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let mut naive = 0.0;
        for i in 0..n {
            for j in 0..n {
                naive += z[i] * s[(i, j)] * z[j];
            }
        }
        let fast = param::vecv(&z).dot(param::vecs(&s).unwrap().as_vector());
        prop_assert!((fast - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
        prop_assert_eq!(param::unvecs(&param::vecs(&s).unwrap()), s);
    }

    #[test]
    fn inverse_gram_tracks_all_rows(dims in small_dims(), seed in any::<u64>(), steps in 1usize..50) {
        let run = recorded_run(dims, seed, steps);
        let last = run.states.last().unwrap();
        let gram = run.psi.transpose() * &run.psi;
        let product = last.inverse_gram() * gram;
        let gap = (product - DMatrix::identity(dims.q_bar(), dims.q_bar())).amax();
        prop_assert!(gap <= 1e-7, "|M Psi'Psi - I| = {gap:e}");
    }

    #[test]
    fn recursive_estimate_equals_batch_solution(dims in small_dims(), seed in any::<u64>(), steps in 1usize..50) {
        let run = recorded_run(dims, seed, steps);
        let q0 = run.psi.nrows() - steps;
        for (i, pair) in run.states.windows(2).enumerate() {
            let (before, after) = (&pair[0], &pair[1]);
            let rows = q0 + i + 1;
            let lift = lstsq(&run.psi.rows(0, rows).into_owned(), &run.xplus.rows(0, rows).into_owned());
            let scale = 1.0 + lift.amax();
            prop_assert!((&lift - after.lift()).amax() <= 1e-8 * scale);
            let kernel = QKernel::new(param::unvecs(before.s()), dims).unwrap();
            let p = riccati::p_from_s(&kernel, before.policies()).unwrap();
            let expected = before.xi().as_vector() + &lift * param::vecs(p.matrix()).unwrap().as_vector();
            let err = (&expected - after.s().as_vector()).amax() / (1.0 + expected.amax());
            prop_assert!(err <= 1e-8, "step {i}: {err:e}");
        }
    }
}

#[test]
fn converged_gains_are_the_kernel_saddle() {
    for dims in [Dims::new(2, 1, 1), Dims::new(3, 2, 1), Dims::new(4, 2, 2)] {
        for seed in 0..5 {
            let (dyn_, cost) = random_instance(dims, seed);
            let sol = riccati::solve_riccati(&dyn_, &cost, 1e-13, 100_000).unwrap();
            let mut env = LinearEnv::new(dyn_.clone(), DVector::from_element(dims.state, 1.0), LinearDisturbance::Adversarial).unwrap();
            let mut cfg = LearnerConfig::new(DMatrix::identity(dims.control, dims.control));
            cfg.w_lambda_d = Some(DMatrix::identity(dims.disturbance, dims.disturbance));
            cfg.epsilon = 1e-10;
            cfg.max_iter = Some(2000);
            cfg.rng_seed = seed;
            let out = qlearn::run_algorithm1(&mut env, &cost, &cfg).unwrap();
            let learned = out.critic.policies();
            let own = riccati::gains_from_s(&QKernel::new(out.critic.kernel(), dims).unwrap()).unwrap();
            assert!((&learned.kv - &own.kv).amax() <= 1e-12 && (&learned.kd - &own.kd).amax() <= 1e-12);
            let gap = (&learned.kv - &sol.policies_star.kv).amax().max((&learned.kd - &sol.policies_star.kd).amax());
            assert!(gap <= 1e-5, "{dims:?}/{seed}: gain gap {gap:e}");
        }
    }
}
