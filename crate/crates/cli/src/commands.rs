use std::fs::File;
use std::path::Path;
use std::time::Instant;

use hinfq::amod::{
    self, AmodDisturbance, AmodEnv, AmodEnvOptions, AmodPlant, DemandSource, DemandTrace, InitialState, NetworkSpec,
    PoissonDemand,
};
use hinfq::linalg;
use hinfq::lq::{self, CostSpec, SystemDynamics};
use hinfq::qlearn::bench::{self, BenchOptions};
use hinfq::qlearn::{self, CriticSettings, Environment, InitialKernel, LearnerConfig, LinearDisturbance, LinearEnv};
use hinfq::riccati::{self, RiccatiSolution};
use nalgebra::{DMatrix, DVector};

use crate::config::{
    matrix_from_rows, AmodInitial, DisturbanceMode, InitialKernelChoice, MatrixOrScalar, PlantSource, ScenarioConfig,
};
use crate::error::{CliError, CliResult};
use crate::output::{
    FileKind, OutputDir, RunReport, BENCH_HEADER, FIT_HEADER, METRICS_HEADER, REBALANCING_HEADER,
};

const DEMAND_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const NOISE_SEED_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const GAMMA_DOUBLINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmodCommand {
    Build,
    Rebalance,
    Simulate,
}

/// Plant and nominal stage cost of a scenario.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dynamics: SystemDynamics,
    pub cost: CostSpec,
    pub network: Option<(NetworkSpec, AmodPlant)>,
}

impl Resolved {
    fn network(&self) -> CliResult<&(NetworkSpec, AmodPlant)> {
        self.network
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a network plant".into()))
    }
}

/// Stage costs of every demand segment of a network, in schedule order.
fn segment_costs(spec: &NetworkSpec, rho: f64, gamma: f64) -> CliResult<Vec<CostSpec>> {
    let rates: Vec<DVector<f64>> = if spec.schedule.is_empty() {
        vec![spec.rate_vector()]
    } else {
        spec.schedule.iter().map(|s| spec.rates_at(s.start_iteration)).collect()
    };
    rates
        .iter()
        .map(|r| Ok(amod::cost_from_network(&spec.with_rates(r)?, rho, gamma)?))
        .collect()
}

fn game_is_solvable(dynamics: &SystemDynamics, cost: &CostSpec) -> bool {
    riccati::suggest_gamma(dynamics, cost, 0).is_some()
}

/// Smallest `gamma * 2^k` for which every cost admits a saddle point.
pub fn feasible_gamma(dynamics: &SystemDynamics, costs: &[CostSpec], gamma: f64) -> CliResult<f64> {
    let mut g = gamma;
    for _ in 0..=GAMMA_DOUBLINGS {
        let mut all = true;
        for c in costs {
            if !game_is_solvable(dynamics, &c.with_gamma(g)?) {
                all = false;
                break;
            }
        }
        if all {
            return Ok(g);
        }
        g *= 2.0;
    }
    Err(CliError::Core(hinfq::Error::GammaTooSmall {
        gamma: g,
        min_eigenvalue: f64::NAN,
    }))
}

pub fn resolve(cfg: &ScenarioConfig) -> CliResult<Resolved> {
    match &cfg.plant {
        PlantSource::Matrices { a, b, l } => {
            let dynamics = SystemDynamics::new(
                matrix_from_rows(a, "plant.a")?,
                matrix_from_rows(b, "plant.b")?,
                matrix_from_rows(l, "plant.l")?,
            )?;
            let rx = matrix_from_rows(cfg.cost.rx.as_ref().expect("validated"), "cost.rx")?;
            let rv = matrix_from_rows(cfg.cost.rv.as_ref().expect("validated"), "cost.rv")?;
            let mut cost = CostSpec::new(rx, rv, cfg.cost.gamma)?;
            cost.check_dims(dynamics.dims())?;
            if cfg.cost.auto_gamma {
                let g = feasible_gamma(&dynamics, std::slice::from_ref(&cost), cfg.cost.gamma)?;
                cost = cost.with_gamma(g)?;
            }
            Ok(Resolved { dynamics, cost, network: None })
        }
        PlantSource::Network(spec) => {
            let plant = amod::build_dynamics(spec)?;
            let rho = cfg.cost.rho.expect("validated");
            let mut gamma = cfg.cost.gamma;
            if cfg.cost.auto_gamma {
                gamma = feasible_gamma(plant.dynamics(), &segment_costs(spec, rho, gamma)?, gamma)?;
            }
            let first = spec.rates_at(0);
            let cost = amod::cost_from_network(&spec.with_rates(&first)?, rho, gamma)?;
            Ok(Resolved {
                dynamics: plant.dynamics().clone(),
                cost,
                network: Some((spec.clone(), plant)),
            })
        }
    }
}

fn solve_or_suggest(dynamics: &SystemDynamics, cost: &CostSpec, cfg: &ScenarioConfig) -> CliResult<RiccatiSolution> {
    match riccati::solve_riccati(dynamics, cost, cfg.riccati.tol, cfg.riccati.max_iter) {
        Ok(sol) => Ok(sol),
        Err(error @ hinfq::Error::GammaTooSmall { .. }) => {
            let suggestion = riccati::suggest_gamma(dynamics, cost, GAMMA_DOUBLINGS)
                .map(|g| g.to_string())
                .unwrap_or_else(|| format!("beyond {}", cost.gamma() * 2f64.powi(GAMMA_DOUBLINGS as i32)));
            Err(CliError::GammaTooSmall { error, suggestion })
        }
        Err(e) => Err(e.into()),
    }
}

fn rel_error(s: &DMatrix<f64>, s_star: &DMatrix<f64>) -> f64 {
    (s - s_star).norm() / s_star.norm()
}

fn finish(mut report: RunReport, out: OutputDir, started: Instant) -> CliResult<RunReport> {
    report.wall_seconds = started.elapsed().as_secs_f64();
    report.manifest = out.manifest;
    report.write(&out.root)?;
    Ok(report)
}

pub fn cmd_solve_riccati(cfg: &ScenarioConfig, out_dir: &Path) -> CliResult<RunReport> {
    let started = Instant::now();
    let resolved = resolve(cfg)?;
    let mut out = OutputDir::create(out_dir)?;
    let mut report = RunReport::new("solve-riccati");
    report.gamma = Some(resolved.cost.gamma());
    let sol = solve_or_suggest(&resolved.dynamics, &resolved.cost, cfg)?;
    out.matrix("p_star.csv", sol.p_star.matrix())?;
    out.matrix("s_star.csv", sol.s_star.matrix())?;
    out.gains("gains.csv", &sol.policies_star.kv, &sol.policies_star.kd)?;
    report.converged = Some(true);
    report.iterations = Some(sol.iterations);
    report.detail("residual", sol.residual);
    report.detail(
        "game_spectral_radius",
        lq::closed_loop_spectral_radius(&resolved.dynamics, &sol.policies_star)?,
    );
    report.detail(
        "control_spectral_radius",
        spectral_radius_control(&resolved.dynamics, &sol.policies_star.kv)?,
    );
    if let Some((spec, plant)) = &resolved.network {
        report.detail("stations", spec.n);
        fleet_complement_detail(plant, &resolved.dynamics, &sol.policies_star.kv, &mut report)?;
    }
    finish(report, out, started)
}

/// Closed-loop radius with the conserved fleet mode removed.
fn fleet_complement_detail(plant: &AmodPlant, dynamics: &SystemDynamics, kv: &DMatrix<f64>, report: &mut RunReport) -> CliResult<()> {
    let a_cl = lq::control_loop_matrix(dynamics, kv)?;
    report.detail("control_fleet_complement_radius", plant.fleet_complement_radius(&a_cl)?);
    Ok(())
}

fn spectral_radius_control(dynamics: &SystemDynamics, kv: &DMatrix<f64>) -> CliResult<f64> {
    Ok(linalg::spectral_radius(&lq::control_loop_matrix(dynamics, kv)?))
}

enum LearnEnv {
    Linear(LinearEnv),
    Amod(Box<AmodEnv>),
}

impl LearnEnv {
    fn as_dyn(&mut self) -> &mut dyn Environment {
        match self {
            LearnEnv::Linear(e) => e,
            LearnEnv::Amod(e) => e.as_mut(),
        }
    }
}

fn demand_source(cfg: &ScenarioConfig, spec: &NetworkSpec, seed: u64) -> CliResult<DemandSource> {
    match &cfg.amod.demand_replay {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(DemandSource::Replay(DemandTrace::read_csv(file, spec.n)?))
        }
        None => Ok(DemandSource::Poisson(PoissonDemand::new(
            spec.rates_at(0),
            seed.wrapping_add(DEMAND_SEED_SALT),
        )?)),
    }
}

fn amod_env(cfg: &ScenarioConfig, resolved: &Resolved, exogenous: bool, seed: u64) -> CliResult<AmodEnv> {
    let (spec, _) = resolved.network()?;
    let disturbance = if exogenous {
        AmodDisturbance::Exogenous(demand_source(cfg, spec, seed)?)
    } else {
        AmodDisturbance::Adversarial
    };
    let initial = match cfg.amod.initial {
        AmodInitial::Default => InitialState::Default,
        AmodInitial::Equilibrium => InitialState::Equilibrium,
    };
    Ok(AmodEnv::new(
        spec.clone(),
        AmodEnvOptions {
            rho: cfg.cost.rho.expect("validated"),
            gamma: resolved.cost.gamma(),
            fleet_size: cfg.amod.fleet_size,
            queue_target: cfg.amod.queue_target,
            initial,
            disturbance,
        },
    )?)
}

fn build_env(cfg: &ScenarioConfig, resolved: &Resolved) -> CliResult<LearnEnv> {
    let seed = cfg.learner.seed;
    let exogenous = cfg.disturbance == DisturbanceMode::Exogenous;
    if resolved.network.is_some() {
        return Ok(LearnEnv::Amod(Box::new(amod_env(cfg, resolved, exogenous, seed)?)));
    }
    let m1 = resolved.dynamics.dims().state;
    let x0 = match &cfg.initial_state {
        Some(v) if v.len() == m1 => DVector::from_column_slice(v),
        Some(v) => return Err(CliError::Config(format!("initial_state has length {}, plant has {m1} states", v.len()))),
        None => DVector::from_element(m1, 1.0),
    };
    let disturbance = if exogenous {
        LinearDisturbance::gaussian(cfg.disturbance_std, seed ^ NOISE_SEED_SALT)
    } else {
        LinearDisturbance::Adversarial
    };
    Ok(LearnEnv::Linear(LinearEnv::new(resolved.dynamics.clone(), x0, disturbance)?))
}

fn learner_config(cfg: &ScenarioConfig, resolved: &Resolved, oracle_p: Option<DMatrix<f64>>) -> CliResult<LearnerConfig> {
    let dims = resolved.dynamics.dims();
    let s = &cfg.learner;
    let mut lc = LearnerConfig::new(s.w_lambda.to_matrix(dims.control, "learner.w_lambda")?);
    lc.w_lambda_d = match (&s.w_lambda_d, cfg.disturbance) {
        (Some(w), _) => Some(w.to_matrix(dims.disturbance, "learner.w_lambda_d")?),
        (None, DisturbanceMode::Adversarial) => {
            let c = match &s.w_lambda {
                MatrixOrScalar::Scalar(c) => *c,
                MatrixOrScalar::Matrix(_) => 0.01,
            };
            Some(DMatrix::identity(dims.disturbance, dims.disturbance) * c)
        }
        (None, DisturbanceMode::Exogenous) => None,
    };
    lc.kv0 = s.kv0.as_ref().map(|m| matrix_from_rows(m, "learner.kv0")).transpose()?;
    lc.kd0 = s.kd0.as_ref().map(|m| matrix_from_rows(m, "learner.kd0")).transpose()?;
    lc.q = s.q;
    lc.epsilon = s.epsilon;
    lc.max_iter = s.max_iter;
    lc.rng_seed = s.seed;
    lc.s0 = match s.s0 {
        InitialKernelChoice::Zero => InitialKernel::Zero,
        InitialKernelChoice::Identity => InitialKernel::Identity,
    };
    lc.oracle_p = oracle_p;
    lc.run_to_max_iter = s.run_to_max_iter;
    lc.settings = CriticSettings {
        forgetting: s.forgetting,
        ..CriticSettings::default()
    };
    Ok(lc)
}

fn realized_demand(env: &AmodEnv) -> CliResult<DemandTrace> {
    let mut t = DemandTrace::new(env.spec().n);
    for (k, tr) in env.trajectory().transitions.iter().enumerate() {
        t.push(k, &tr.d)?;
    }
    Ok(t)
}

/// Writes metrics.csv and demand.csv and reports end-of-run statistics.
fn amod_outputs(env: &AmodEnv, window: usize, out: &mut OutputDir, report: &mut RunReport) -> CliResult<()> {
    let plant = env.plant();
    let m = amod::metrics(env.trajectory(), plant, window)?;
    let rows: Vec<Vec<String>> = m
        .rows
        .iter()
        .map(|r| {
            vec![
                r.window.to_string(),
                r.start_step.to_string(),
                r.queue.to_string(),
                r.carrying.to_string(),
                r.rebalancing.to_string(),
            ]
        })
        .collect();
    out.table("metrics.csv", FileKind::Metrics, &METRICS_HEADER, &rows)?;
    out.demand("demand.csv", &realized_demand(env)?)?;

    let steps = env.trajectory().len();
    report.detail("stations", env.spec().n);
    report.detail("steps", steps);
    report.detail("violations", m.violations);
    if let Some(first) = env.trajectory().transitions.first() {
        report.detail("fleet_start", plant.fleet(&first.x));
        report.detail("fleet_end", plant.fleet(env.original_state()));
    }
    // Final complete window, with the demand it was scheduled under.
    let full = steps / window;
    if full > 0 {
        let row = m.rows[full - 1];
        let seg = env.segment_index_at(row.start_step + window - 1);
        report.detail("final_window_start", row.start_step);
        report.detail("final_window_carrying", row.carrying);
        report.detail("final_window_rebalancing", row.rebalancing);
        report.detail("final_window_queue", row.queue);
        report.detail("final_window_lambda_mean", env.segments()[seg].rates.mean());
        report.detail("final_window_r_bar_mean", env.segments()[seg].equilibrium.r_bar.mean());
    }
    Ok(())
}

pub fn cmd_learn(cfg: &ScenarioConfig, out_dir: &Path) -> CliResult<RunReport> {
    let started = Instant::now();
    let resolved = resolve(cfg)?;
    let mut out = OutputDir::create(out_dir)?;
    let mut report = RunReport::new("learn");
    report.gamma = Some(resolved.cost.gamma());
    let oracle = if cfg.oracle {
        Some(solve_or_suggest(&resolved.dynamics, &resolved.cost, cfg)?)
    } else {
        None
    };
    let lc = learner_config(cfg, &resolved, oracle.as_ref().map(|s| s.p_star.matrix().clone()))?;
    let mut env = build_env(cfg, &resolved)?;
    let result = qlearn::run_algorithm1(env.as_dyn(), &resolved.cost, &lc);
    let output = match result {
        Ok(o) => o,
        Err(failure) => {
            out.trace("trace.csv", &failure.trace)?;
            report.converged = Some(false);
            report.detail("error", failure.error.to_string());
            let _ = finish(report, out, started);
            return Err(failure.into());
        }
    };
    out.trace("trace.csv", &output.trace)?;
    let pol = output.critic.policies();
    out.gains("final_gains.csv", &pol.kv, &pol.kd)?;
    out.matrix("final_s.csv", &output.critic.kernel())?;

    let dims = resolved.dynamics.dims();
    report.converged = Some(output.converged);
    report.iterations = Some(output.loop_iterations);
    report.detail("init_q", output.init_q);
    report.detail("q_bar", dims.q_bar());
    report.detail("dims", [dims.state, dims.control, dims.disturbance]);
    report.detail("control_spectral_radius", spectral_radius_control(&resolved.dynamics, &pol.kv)?);
    report.detail("game_spectral_radius", lq::closed_loop_spectral_radius(&resolved.dynamics, pol)?);

    let final_cost = match &env {
        LearnEnv::Amod(e) => e.current_cost().clone(),
        LearnEnv::Linear(_) => resolved.cost.clone(),
    };
    if let Some(sol) = &oracle {
        let sol = if final_cost == resolved.cost {
            sol.clone()
        } else {
            solve_or_suggest(&resolved.dynamics, &final_cost, cfg)?
        };
        report.s_rel_error = Some(rel_error(&output.critic.kernel(), sol.s_star.matrix()));
    }
    if let LearnEnv::Amod(e) = &env {
        fleet_complement_detail(e.plant(), &resolved.dynamics, &pol.kv, &mut report)?;
        amod_outputs(e, cfg.amod.metrics_window, &mut out, &mut report)?;
    }
    finish(report, out, started)
}

pub fn cmd_amod(cfg: &ScenarioConfig, sub: AmodCommand, out_dir: &Path) -> CliResult<RunReport> {
    let started = Instant::now();
    let resolved = resolve(cfg)?;
    let (spec, plant) = resolved.network()?;
    let mut out = OutputDir::create(out_dir)?;
    let mut report = RunReport::new(match sub {
        AmodCommand::Build => "amod build",
        AmodCommand::Rebalance => "amod rebalance",
        AmodCommand::Simulate => "amod simulate",
    });
    report.gamma = Some(resolved.cost.gamma());
    report.detail("stations", spec.n);
    match sub {
        AmodCommand::Build => {
            let dyn_ = plant.dynamics();
            out.matrix("a.csv", dyn_.a())?;
            out.matrix("b.csv", dyn_.b())?;
            out.matrix("l.csv", dyn_.l())?;
            let dims = plant.dims();
            report.detail("links", plant.link_count());
            report.detail("m1", dims.state);
            report.detail("m2", dims.control);
            report.detail("m3", dims.disturbance);
            report.detail("q_bar", dims.q_bar());
            report.detail("vecs_p_len", dims.value_params());
            report.detail("kv_entries", dims.control * dims.state);
            report.detail("kd_entries", dims.disturbance * dims.state);
        }
        AmodCommand::Rebalance => {
            let sol = amod::solve_rebalancing(spec)?;
            let eq = amod::equilibrium(spec, &sol.r_bar, cfg.amod.fleet_size, amod::KKT_TOL)?;
            let rows: Vec<Vec<String>> = amod::links(spec.n)
                .into_iter()
                .enumerate()
                .map(|(k, (o, d))| vec![k.to_string(), o.to_string(), d.to_string(), sol.r_bar[k].to_string()])
                .collect();
            out.table("r_bar.csv", FileKind::Rebalancing, &REBALANCING_HEADER, &rows)?;
            report.converged = Some(true);
            report.iterations = Some(sol.iterations);
            report.detail("objective", sol.objective);
            report.detail("fleet_lower_bound", eq.fleet_lower_bound);
            report.detail("kkt_primal", sol.kkt.primal);
            report.detail("kkt_stationarity", sol.kkt.stationarity);
            report.detail("kkt_dual", sol.kkt.dual);
            report.detail("kkt_complementarity", sol.kkt.complementarity);
            report.detail("r_bar", sol.r_bar.as_slice());
        }
        AmodCommand::Simulate => {
            let kv = match &cfg.amod.gains {
                Some(path) => crate::output::read_gains_csv(path)?.0,
                None => solve_or_suggest(&resolved.dynamics, &resolved.cost, cfg)?.policies_star.kv,
            };
            let dims = plant.dims();
            if kv.shape() != (dims.control, dims.state) {
                return Err(CliError::Config(format!("gains have shape {:?}, plant needs {:?}", kv.shape(), (dims.control, dims.state))));
            }
            let mut env = amod_env(cfg, &resolved, true, cfg.learner.seed)?;
            let zero_d = DVector::zeros(dims.disturbance);
            for _ in 0..cfg.amod.simulate_steps {
                let v = &kv * env.state();
                env.step(&v, &zero_d)?;
            }
            report.iterations = Some(cfg.amod.simulate_steps);
            report.detail("control_spectral_radius", spectral_radius_control(&resolved.dynamics, &kv)?);
            fleet_complement_detail(plant, &resolved.dynamics, &kv, &mut report)?;
            amod_outputs(&env, cfg.amod.metrics_window, &mut out, &mut report)?;
        }
    }
    finish(report, out, started)
}

pub fn cmd_bench(cfg: &ScenarioConfig, out_dir: &Path) -> CliResult<RunReport> {
    let started = Instant::now();
    let mut out = OutputDir::create(out_dir)?;
    let mut report = RunReport::new("bench");
    let options = BenchOptions {
        repetitions: cfg.bench.repetitions,
        warmup: cfg.bench.warmup,
        batch_repetitions: cfg.bench.batch_repetitions,
        seed: cfg.learner.seed,
        ..BenchOptions::default()
    };
    let rows = bench::bench_update_cost(&cfg.bench.dims_list(), options)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.q_bar.to_string(), r.rls_seconds.to_string(), r.batch_seconds.to_string()])
        .collect();
    out.table("bench.csv", FileKind::Bench, &BENCH_HEADER, &table)?;
    let q: Vec<f64> = rows.iter().map(|r| r.q_bar as f64).collect();
    let rls: Vec<f64> = rows.iter().map(|r| r.rls_seconds).collect();
    let batch: Vec<f64> = rows.iter().map(|r| r.batch_seconds).collect();
    let mut fits = Vec::new();
    for (name, ys) in [("rls", &rls), ("batch", &batch)] {
        let fit = bench::fit_loglog(&q, ys)?;
        report.detail(&format!("{name}_slope"), fit.slope);
        report.detail(&format!("{name}_slope_ci"), [fit.ci_low, fit.ci_high]);
        fits.push(vec![
            name.to_owned(),
            fit.slope.to_string(),
            fit.intercept.to_string(),
            fit.ci_low.to_string(),
            fit.ci_high.to_string(),
        ]);
    }
    out.table("fit.csv", FileKind::Fit, &FIT_HEADER, &fits)?;
    finish(report, out, started)
}
