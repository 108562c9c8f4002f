//! Fixtures shared by the critic benchmarks.

use hinfq::lq::{Dims, PolicyPair, Transition};
use hinfq::qlearn::bench::bench_plant;
use hinfq::qlearn::{critic, CriticSettings, CriticState, Environment, LinearDisturbance, LinearEnv, SymVec};
use hinfq::Result;
use nalgebra::{DMatrix, DVector};

/// A warmed-up critic, one on-policy observation for it, and a square
/// probing batch for the batch least-squares baseline.
pub struct UpdateFixture {
    pub dims: Dims,
    pub state: CriticState,
    pub obs: Transition,
    pub psi: DMatrix<f64>,
    pub target: DVector<f64>,
}

pub fn update_fixture(dims: Dims, seed: u64, warmup: usize) -> Result<UpdateFixture> {
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
    let mut state = critic::init_solve(&batch, &cost, &SymVec::zeros(dims.joint()), &zeros, CriticSettings::default())?;
    let step = |env: &mut LinearEnv, state: &CriticState| {
        let x = env.state();
        let v = &state.policies().kv * &x;
        let d = &state.policies().kd * &x;
        env.step(&v, &d)
    };
    for _ in 0..warmup {
        let obs = step(&mut env, &state)?;
        state.update(&obs)?;
    }
    let obs = step(&mut env, &state)?;
    let target = &batch.psi0 * state.xi().as_vector();
    Ok(UpdateFixture {
        dims,
        state,
        obs,
        psi: batch.psi0,
        target,
    })
}

/// Sizes benchmarked by default, `q_bar` in {21, 105, 276, 561}.
pub fn sizes() -> Vec<Dims> {
    vec![Dims::new(4, 1, 1), Dims::new(10, 2, 2), Dims::new(17, 4, 2), Dims::new(25, 5, 3)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_observation_is_on_policy() {
        let mut fx = update_fixture(Dims::new(3, 1, 1), 1, 5).unwrap();
        assert_eq!(fx.psi.nrows(), fx.dims.q_bar());
        fx.state.update(&fx.obs).unwrap();
    }
}
