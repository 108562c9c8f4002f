use std::path::{Path, PathBuf};

use hinfq::amod::NetworkSpec;
use hinfq::lq::Dims;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// A scenario document. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub plant: PlantSource,
    pub cost: CostConfig,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub riccati: RiccatiSettings,
    #[serde(default)]
    pub disturbance: DisturbanceMode,
    /// Standard deviation of the Gaussian disturbance of an explicit plant in
    /// exogenous mode.
    #[serde(default = "default_std")]
    pub disturbance_std: f64,
    /// Initial state of an explicit plant; defaults to all ones.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Solve the Riccati equation alongside learning and report errors against it.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub amod: AmodSettings,
    #[serde(default)]
    pub bench: BenchSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSource {
    Matrices {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        l: Vec<Vec<f64>>,
    },
    Network(NetworkSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub gamma: f64,
    /// Dispatch weight of a network plant.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub rx: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub rv: Option<Vec<Vec<f64>>>,
    /// Double `gamma` until every stage cost of the scenario admits a
    /// saddle point, reporting the value used.
    #[serde(default)]
    pub auto_gamma: bool,
}

/// A covariance given either as `c` (meaning `c I`) or as a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixOrScalar {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl MatrixOrScalar {
    pub fn to_matrix(&self, n: usize, what: &str) -> CliResult<DMatrix<f64>> {
        match self {
            MatrixOrScalar::Scalar(c) => Ok(DMatrix::identity(n, n) * *c),
            MatrixOrScalar::Matrix(rows) => {
                let m = matrix_from_rows(rows, what)?;
                if m.shape() != (n, n) {
                    return Err(CliError::Config(format!("{what} must be {n}x{n}, got {:?}", m.shape())));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKernelChoice {
    #[default]
    Zero,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSettings {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default = "default_w_lambda")]
    pub w_lambda: MatrixOrScalar,
    /// Probing covariance on the disturbance; only used in adversarial mode.
    #[serde(default)]
    pub w_lambda_d: Option<MatrixOrScalar>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub s0: InitialKernelChoice,
    #[serde(default)]
    pub kv0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub kd0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub run_to_max_iter: bool,
    #[serde(default = "default_forgetting")]
    pub forgetting: f64,
}

fn default_epsilon() -> f64 {
    hinfq::qlearn::algorithm::DEFAULT_EPSILON
}

fn default_w_lambda() -> MatrixOrScalar {
    MatrixOrScalar::Scalar(0.01)
}

fn default_forgetting() -> f64 {
    1.0
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            epsilon: default_epsilon(),
            q: None,
            w_lambda: default_w_lambda(),
            w_lambda_d: None,
            max_iter: None,
            seed: 0,
            s0: InitialKernelChoice::Zero,
            kv0: None,
            kd0: None,
            run_to_max_iter: false,
            forgetting: default_forgetting(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiSettings {
    #[serde(default = "default_riccati_tol")]
    pub tol: f64,
    #[serde(default = "default_riccati_max_iter")]
    pub max_iter: usize,
}

fn default_riccati_tol() -> f64 {
    hinfq::riccati::DEFAULT_TOL
}

fn default_riccati_max_iter() -> usize {
    hinfq::riccati::DEFAULT_MAX_ITER
}

impl Default for RiccatiSettings {
    fn default() -> Self {
        RiccatiSettings {
            tol: default_riccati_tol(),
            max_iter: default_riccati_max_iter(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    /// `d = Kd x`, chosen by the learner.
    #[default]
    Adversarial,
    /// Gaussian noise for explicit plants, Poisson demand for networks.
    Exogenous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmodInitial {
    #[default]
    Default,
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmodSettings {
    #[serde(default = "default_window")]
    pub metrics_window: usize,
    #[serde(default)]
    pub fleet_size: Option<f64>,
    /// Equilibrium queue length on every link.
    #[serde(default)]
    pub queue_target: f64,
    #[serde(default)]
    pub initial: AmodInitial,
    /// Demand CSV `(iteration, origin, dest, count)` replayed instead of sampling.
    #[serde(default)]
    pub demand_replay: Option<PathBuf>,
    /// Steps of `amod simulate`.
    #[serde(default = "default_sim_steps")]
    pub simulate_steps: usize,
    /// Long-format `final_gains.csv` from a previous `learn` run; the
    /// Riccati gains are used when absent.
    #[serde(default)]
    pub gains: Option<PathBuf>,
}

fn default_window() -> usize {
    hinfq::amod::metrics::DEFAULT_WINDOW
}

fn default_sim_steps() -> usize {
    360
}

impl Default for AmodSettings {
    fn default() -> Self {
        AmodSettings {
            metrics_window: default_window(),
            fleet_size: None,
            queue_target: 0.0,
            initial: AmodInitial::Default,
            demand_replay: None,
            simulate_steps: default_sim_steps(),
            gains: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    /// `(m1, m2, m3)` triples with strictly increasing `q_bar`.
    #[serde(default)]
    pub dims: Option<Vec<[usize; 3]>>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_batch_reps")]
    pub batch_repetitions: usize,
}

fn default_reps() -> usize {
    100
}

fn default_warmup() -> usize {
    10
}

fn default_batch_reps() -> usize {
    5
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            dims: None,
            repetitions: default_reps(),
            warmup: default_warmup(),
            batch_repetitions: default_batch_reps(),
        }
    }
}

impl BenchSettings {
    pub fn dims_list(&self) -> Vec<Dims> {
        match &self.dims {
            Some(list) => list.iter().map(|d| Dims::new(d[0], d[1], d[2])).collect(),
            None => hinfq::qlearn::bench::default_sweep(),
        }
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.amod.demand_replay, &mut cfg.amod.gains].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if !(self.cost.gamma.is_finite() && self.cost.gamma > 0.0) {
            return Err(CliError::Config(format!("gamma must be positive, got {}", self.cost.gamma)));
        }
        if !(self.learner.epsilon > 0.0) {
            return Err(CliError::Config(format!("epsilon must be positive, got {}", self.learner.epsilon)));
        }
        match &self.plant {
            PlantSource::Matrices { .. } => {
                if self.cost.rx.is_none() || self.cost.rv.is_none() {
                    return Err(CliError::Config("explicit plants need cost.rx and cost.rv".into()));
                }
                if self.cost.rho.is_some() {
                    return Err(CliError::Config("cost.rho applies only to network plants".into()));
                }
            }
            PlantSource::Network(spec) => {
                spec.validate()?;
                if self.cost.rho.is_none() {
                    return Err(CliError::Config("network plants need cost.rho".into()));
                }
                if self.cost.rx.is_some() || self.cost.rv.is_some() {
                    return Err(CliError::Config("network costs are built from rho; drop cost.rx/rv".into()));
                }
            }
        }
        if self.amod.metrics_window == 0 {
            return Err(CliError::Config("amod.metrics_window must be positive".into()));
        }
        Ok(())
    }
}
