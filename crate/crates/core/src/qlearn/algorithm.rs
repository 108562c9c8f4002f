//! The full learning loop: probing batch, initial solve, then one critic and
//! actor update per environment step until the kernel stops moving.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;

use super::critic::{self, CriticSettings, CriticState};
use super::env::Environment;
use super::param::{self, SymVec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lq::{CostSpec, PolicyPair};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Initial critic kernel `S^0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialKernel {
    Zero,
    Identity,
    Custom(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub kv0: Option<DMatrix<f64>>,
    pub kd0: Option<DMatrix<f64>>,
    /// Probing-noise covariance on the control.
    pub w_lambda: DMatrix<f64>,
    /// Probing-noise covariance on the disturbance, used only when the
    /// environment lets the learner choose it.
    pub w_lambda_d: Option<DMatrix<f64>>,
    /// Initial batch size; defaults to `q_bar`.
    pub q: Option<usize>,
    pub epsilon: f64,
    /// Loop iterations after the initial solve; defaults to `10 q_bar`.
    pub max_iter: Option<usize>,
    pub rng_seed: u64,
    pub s0: InitialKernel,
    /// Reference `P*` for the `p_err_norm` column.
    pub oracle_p: Option<DMatrix<f64>>,
    /// Keep stepping until `max_iter` even after the stopping rule fires.
    pub run_to_max_iter: bool,
    pub settings: CriticSettings,
}

impl LearnerConfig {
    pub fn new(w_lambda: DMatrix<f64>) -> Self {
        LearnerConfig {
            kv0: None,
            kd0: None,
            w_lambda,
            w_lambda_d: None,
            q: None,
            epsilon: DEFAULT_EPSILON,
            max_iter: None,
            rng_seed: 0,
            s0: InitialKernel::Zero,
            oracle_p: None,
            run_to_max_iter: false,
            settings: CriticSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Environment step at which the record was taken.
    pub iteration: usize,
    pub s_delta_norm: f64,
    pub kv_norm: f64,
    pub kd_norm: f64,
    pub p_err_norm: Option<f64>,
    pub update_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: [&str; 6] = [
    "iteration",
    "s_delta_norm",
    "kv_norm",
    "kd_norm",
    "p_err_norm",
    "update_seconds",
];

impl LearningTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.s_delta_norm.to_string(),
                r.kv_norm.to_string(),
                r.kd_norm.to_string(),
                r.p_err_norm.map(|x| x.to_string()).unwrap_or_default(),
                r.update_seconds.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != TRACE_HEADER {
            return Err(Error::Csv(format!("unexpected trace header {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Csv(format!("{s:?}: {e}")));
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row?;
            records.push(TraceRecord {
                iteration: row[0].parse().map_err(|e| Error::Csv(format!("{e}")))?,
                s_delta_norm: num(&row[1])?,
                kv_norm: num(&row[2])?,
                kd_norm: num(&row[3])?,
                p_err_norm: if row[4].is_empty() { None } else { Some(num(&row[4])?) },
                update_seconds: num(&row[5])?,
            });
        }
        Ok(LearningTrace { records })
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[0].iteration < w[1].iteration)
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutput {
    pub critic: CriticState,
    pub trace: LearningTrace,
    pub converged: bool,
    /// Single-sample updates performed after the initial solve.
    pub loop_iterations: usize,
    pub init_q: usize,
}

/// A failed run still hands back whatever was traced.
#[derive(Debug, Clone)]
pub struct LearnFailure {
    pub error: Error,
    pub trace: LearningTrace,
    pub critic: Option<CriticState>,
}

impl std::fmt::Display for LearnFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} trace records)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for LearnFailure {}

fn record(critic: &CriticState, iteration: usize, delta: f64, oracle_p: Option<&DMatrix<f64>>, seconds: f64) -> TraceRecord {
    let p_err_norm = oracle_p.and_then(|pstar| critic.value_kernel().ok().map(|p| (p - pstar).norm()));
    let pol = critic.policies();
    TraceRecord {
        iteration,
        s_delta_norm: delta,
        kv_norm: pol.kv.norm(),
        kd_norm: pol.kd.norm(),
        p_err_norm,
        update_seconds: seconds,
    }
}

/// Runs the model-free learner against `env`.
pub fn run_algorithm1(
    env: &mut dyn Environment,
    cost: &CostSpec,
    config: &LearnerConfig,
) -> std::result::Result<LearnOutput, LearnFailure> {
    let mut trace = LearningTrace::default();
    let fail = |error: Error, trace: LearningTrace, critic: Option<CriticState>| LearnFailure { error, trace, critic };

    let dims = env.dims();
    if !(config.epsilon > 0.0) {
        return Err(fail(Error::InvalidArgument(format!("epsilon must be positive, got {}", config.epsilon)), trace, None));
    }
    let policies0 = PolicyPair {
        kv: config.kv0.clone().unwrap_or_else(|| DMatrix::zeros(dims.control, dims.state)),
        kd: config.kd0.clone().unwrap_or_else(|| DMatrix::zeros(dims.disturbance, dims.state)),
    };
    let n_z = dims.joint();
    let s0_matrix = match &config.s0 {
        InitialKernel::Zero => DMatrix::zeros(n_z, n_z),
        InitialKernel::Identity => DMatrix::identity(n_z, n_z),
        InitialKernel::Custom(m) => m.clone(),
    };
    let s0 = match param::vecs(&s0_matrix).and_then(|v| SymVec::new(v.into_vector(), n_z)) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, trace, None)),
    };
    let q = config.q.unwrap_or(dims.q_bar());
    let max_iter = config.max_iter.unwrap_or(10 * dims.q_bar());

    let mut cost = cost.clone();
    if let Some(c) = env.take_cost_change() {
        cost = c;
    }
    let started = Instant::now();
    let batch = match critic::collect_init(env, &policies0, &config.w_lambda, config.w_lambda_d.as_ref(), q, config.rng_seed) {
        Ok(b) => b,
        Err(e) => return Err(fail(e, trace, None)),
    };
    if let Some(c) = env.take_cost_change() {
        cost = c;
    }
    let mut state = match critic::init_solve(&batch, &cost, &s0, &policies0, config.settings) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, trace, None)),
    };
    let init_seconds = started.elapsed().as_secs_f64();
    let mut delta = linalg::sym_spectral_norm(&(state.kernel() - &s0_matrix));
    trace
        .records
        .push(record(&state, q, delta, config.oracle_p.as_ref(), init_seconds));

    let mut converged = delta <= config.epsilon;
    let mut loop_iterations = 0;
    while loop_iterations < max_iter && (config.run_to_max_iter || !converged) {
        if let Some(c) = env.take_cost_change() {
            if let Err(e) = state.set_cost(&c) {
                return Err(fail(e, trace, Some(state)));
            }
        }
        let x = env.state();
        let pol = state.policies();
        let v = &pol.kv * &x;
        let d = &pol.kd * &x;
        let obs = match env.step(&v, &d) {
            Ok(o) => o,
            Err(e) => return Err(fail(e, trace, Some(state))),
        };
        let before = state.kernel();
        let t0 = Instant::now();
        if let Err(e) = state.update(&obs) {
            return Err(fail(e, trace, Some(state)));
        }
        let seconds = t0.elapsed().as_secs_f64();
        loop_iterations += 1;
        delta = linalg::sym_spectral_norm(&(state.kernel() - before));
        converged = delta <= config.epsilon;
        trace.records.push(record(
            &state,
            q + loop_iterations,
            delta,
            config.oracle_p.as_ref(),
            seconds,
        ));
    }

    if !converged && !config.run_to_max_iter {
        return Err(fail(
            Error::MaxIterExceeded {
                iterations: loop_iterations,
                last_delta: delta,
            },
            trace,
            Some(state),
        ));
    }
    Ok(LearnOutput {
        critic: state,
        trace,
        converged,
        loop_iterations,
        init_q: q,
    })
}
