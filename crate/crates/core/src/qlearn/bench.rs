//! Wall-clock comparison of the recursive update against a from-scratch
//! least-squares solve, with log-log slope fits.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::critic::{self, CriticSettings, CriticState};
use super::env::{Environment, LinearDisturbance, LinearEnv};
use super::param::SymVec;
use crate::error::{Error, Result};
use crate::lq::{CostSpec, Dims, PolicyPair, SystemDynamics, Transition};

const MAX_BATCH_SAMPLES: usize = 100_000;
const ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    /// Timed recursive updates per size (median reported).
    pub repetitions: usize,
    /// Discarded updates before timing starts.
    pub warmup: usize,
    /// Minimum timed batch solves per size (median reported). Small sizes
    /// repeat until `min_batch_seconds` of solves have been timed.
    pub batch_repetitions: usize,
    pub min_batch_seconds: f64,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 100,
            warmup: 10,
            batch_repetitions: 5,
            min_batch_seconds: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub q_bar: usize,
    pub rls_seconds: f64,
    pub batch_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval on the slope.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// A stable plant of the given size with a comfortably feasible game.
pub fn bench_plant(dims: Dims, seed: u64) -> Result<(SystemDynamics, CostSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m1 = dims.state;
    let scale = 0.4 / (m1 as f64).sqrt();
    let mut random = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| s * rng.random_range(-1.0..1.0));
    let a = DMatrix::identity(m1, m1) * 0.5 + random(m1, m1, scale);
    let b = random(m1, dims.control, 1.0 / (m1 as f64).sqrt());
    let l = random(m1, dims.disturbance, 0.5 / (m1 as f64).sqrt());
    let dyn_ = SystemDynamics::new(a, b, l)?;
    let cost = CostSpec::new(DMatrix::identity(m1, m1), DMatrix::identity(dims.control, dims.control), 25.0)?;
    Ok((dyn_, cost))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Least-squares re-solve over a fixed batch of `q_bar` rows through the
/// normal equations, the per-iteration cost of batch Q-learning.
pub fn batch_ls_solve(psi: &DMatrix<f64>, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = psi.transpose() * psi;
    let rhs = psi.transpose() * gamma;
    let chol = nalgebra::Cholesky::new(gram).ok_or(Error::NotDefinite {
        what: "batch Gram matrix",
        min_eigenvalue: f64::NAN,
    })?;
    Ok(chol.solve(&rhs))
}

fn steady_state(dims: Dims, seed: u64) -> Result<(LinearEnv, CriticState)> {
    let (dyn_, cost) = bench_plant(dims, seed)?;
    let mut env = LinearEnv::new(dyn_, DVector::from_element(dims.state, 1.0), LinearDisturbance::gaussian(1.0, seed ^ 0x5eed))?;
    let zeros = PolicyPair::zeros(dims);
    let batch = critic::collect_init(
        &mut env,
        &zeros,
        &DMatrix::identity(dims.control, dims.control),
        None,
        dims.q_bar(),
        seed,
    )?;
    let state = critic::init_solve(&batch, &cost, &SymVec::zeros(dims.joint()), &zeros, CriticSettings::default())?;
    Ok((env, state))
}

fn on_policy_step(env: &mut LinearEnv, state: &CriticState) -> Result<Transition> {
    let x = env.state();
    let v = &state.policies().kv * &x;
    let d = &state.policies().kd * &x;
    env.step(&v, &d)
}

struct Fixture {
    q_bar: usize,
    env: LinearEnv,
    state: CriticState,
    psi: DMatrix<f64>,
    target: DVector<f64>,
    rls_times: Vec<f64>,
    batch_times: Vec<f64>,
}

fn fixture(dims: Dims, seed: u64, warmup: usize) -> Result<Fixture> {
    let (mut env, mut state) = steady_state(dims, seed)?;
    for _ in 0..warmup {
        let obs = on_policy_step(&mut env, &state)?;
        state.update(&obs)?;
    }
    // Batch of q_bar fresh probing rows (square, full rank).
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c);
    let q = dims.q_bar();
    let mut psi = DMatrix::zeros(q, q);
    let mut target = DVector::zeros(q);
    for t in 0..q {
        let x = env.state();
        let v = &state.policies().kv * &x + DVector::from_fn(dims.control, |_, _| rng.random_range(-1.0..1.0));
        let obs = env.step(&v, &DVector::zeros(dims.disturbance))?;
        let row = super::param::vecv(&obs.joint());
        target[t] = row.dot(state.xi().as_vector());
        psi.set_row(t, &row.transpose());
    }
    let _ = batch_ls_solve(&psi, &target)?;
    Ok(Fixture {
        q_bar: q,
        env,
        state,
        psi,
        target,
        rls_times: Vec::new(),
        batch_times: Vec::new(),
    })
}

/// Median seconds per recursive update and per batch re-solve, for each size.
///
/// Sizes are timed in interleaved rounds so that slow drift of the machine
/// affects all of them alike.
pub fn bench_update_cost(dims_list: &[Dims], options: BenchOptions) -> Result<Vec<BenchRow>> {
    if dims_list.windows(2).any(|w| w[1].q_bar() <= w[0].q_bar()) {
        return Err(Error::InvalidArgument("dims must yield strictly increasing q_bar".into()));
    }
    if options.repetitions == 0 || options.batch_repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be positive".into()));
    }
    let mut fixtures = dims_list
        .iter()
        .enumerate()
        .map(|(k, &dims)| fixture(dims, options.seed.wrapping_add(k as u64), options.warmup))
        .collect::<Result<Vec<_>>>()?;
    let rls_per_round = options.repetitions.div_ceil(ROUNDS);
    let batch_per_round = options.batch_repetitions.div_ceil(ROUNDS);
    let batch_seconds_per_round = options.min_batch_seconds / ROUNDS as f64;
    for _ in 0..ROUNDS {
        for f in &mut fixtures {
            for _ in 0..rls_per_round {
                let obs = on_policy_step(&mut f.env, &f.state)?;
                let t0 = Instant::now();
                f.state.update(&obs)?;
                f.rls_times.push(t0.elapsed().as_secs_f64());
            }
            let (mut count, mut spent) = (0, 0.0);
            while count < batch_per_round || (spent < batch_seconds_per_round && count < MAX_BATCH_SAMPLES) {
                let t0 = Instant::now();
                let sol = batch_ls_solve(&f.psi, &f.target)?;
                let dt = t0.elapsed().as_secs_f64();
                std::hint::black_box(sol);
                f.batch_times.push(dt);
                count += 1;
                spent += dt;
            }
        }
    }
    Ok(fixtures
        .into_iter()
        .map(|f| BenchRow {
            q_bar: f.q_bar,
            rls_seconds: median(f.rls_times),
            batch_seconds: median(f.batch_times),
        })
        .collect())
}

/// Ordinary least-squares fit of `log y = a + b log x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least three points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("slope fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        ci_low: slope - t * se,
        ci_high: slope + t * se,
    })
}

/// Dimensions used by the default timing sweep, `q_bar` in {21, 105, 276, 561, 1128}.
pub fn default_sweep() -> Vec<Dims> {
    vec![
        Dims::new(4, 1, 1),
        Dims::new(10, 2, 2),
        Dims::new(17, 4, 2),
        Dims::new(25, 5, 3),
        Dims::new(35, 8, 4),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_sizes() {
        let q: Vec<usize> = default_sweep().iter().map(|d| d.q_bar()).collect();
        assert_eq!(q, vec![21, 105, 276, 561, 1128]);
    }

    #[test]
    fn exact_power_law_fit() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_increasing_sizes() {
        let dims = [Dims::new(2, 1, 1), Dims::new(2, 1, 1)];
        assert!(bench_update_cost(&dims, BenchOptions::default()).is_err());
    }
}
