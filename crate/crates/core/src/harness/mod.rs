//! Instance generation, experiment orchestration and persistence.

pub mod check;
pub mod io;

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{evaluate, ProblemInstance};
use crate::solver::{solve, SolveFailure, SolverConfig, SolverMode, SolverTrace, TerminalStatus};

/// How the target distribution b is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BMode {
    SimplexRandom,
    OneHot,
    SoftmaxOfRandomX,
}

impl std::fmt::Display for BMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BMode::SimplexRandom => "simplex_random",
            BMode::OneHot => "one_hot",
            BMode::SoftmaxOfRandomX => "softmax_of_random_x",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for BMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex_random" | "simplex-random" => Ok(BMode::SimplexRandom),
            "one_hot" | "one-hot" => Ok(BMode::OneHot),
            "softmax_of_random_x" | "softmax-of-random-x" => Ok(BMode::SoftmaxOfRandomX),
            other => Err(Error::config(format!("unknown b mode '{other}'"))),
        }
    }
}

/// Generates a seeded instance whose preconditions hold by construction:
/// A is Gaussian rescaled to ‖A‖ = R/2 (strict margin under the R bound),
/// b is a subprobability vector per `b_mode`, and the uniform weights meet
/// the constant-C threshold for every γ in [0, 1] with margin one:
/// wᵢ² = C·max(1, ln²n) + l/σ_min(A)² + 1.
#[allow(clippy::too_many_arguments)]
pub fn generate_instance(
    n: usize,
    d: usize,
    r: f64,
    seed: u64,
    b_mode: BMode,
    c_constant: f64,
    l: f64,
    gamma: f64,
) -> Result<ProblemInstance> {
    if n < d || d == 0 {
        return Err(Error::config(format!(
            "need n >= d >= 1 for rank-safe generation, got n = {n}, d = {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_raw: DMatrix<f64> = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let sv = a_raw.clone().svd(false, false).singular_values;
    let a = &a_raw * (0.5 * r / sv.max());
    let sigma_min = a.clone().svd(false, false).singular_values.min();
    if sigma_min <= 0.0 {
        return Err(Error::Rank {
            context: "generated design is rank deficient".into(),
        });
    }

    let mut x_true = None;
    let b = match b_mode {
        BMode::SimplexRandom => {
            // -ln U draws are Exp(1), so the normalized vector is uniform on
            // the simplex.
            let raw = DVector::from_fn(n, |_, _| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln());
            &raw / raw.iter().sum::<f64>()
        }
        BMode::OneHot => {
            let k = rng.random_range(0..n);
            DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 })
        }
        BMode::SoftmaxOfRandomX => {
            let x = crate::linalg::sample_in_ball(&mut rng, d, 0.5 * r);
            let z = &a * &x;
            let u = z.map(f64::exp);
            let f = &u / u.iter().sum::<f64>();
            x_true = Some(x.iter().copied().collect::<Vec<f64>>());
            &f / f.iter().sum::<f64>()
        }
    };

    let ln_n = (n as f64).ln();
    let wsq = c_constant * (ln_n * ln_n).max(1.0) + l / (sigma_min * sigma_min) + 1.0;
    let w = DVector::from_element(n, wsq.sqrt());

    let mut problem = ProblemInstance::new(a, b, w, gamma, l, r)?;
    problem.metadata.seed = Some(seed);
    problem.metadata.b_mode = Some(b_mode.to_string());
    problem.metadata.x_true = x_true;
    Ok(problem)
}

/// Runs the exact-Newton oracle to grad_norm ≤ 1e−13 (or 200 iterations)
/// and stores the minimizer in the instance metadata.
pub fn attach_oracle(problem: &mut ProblemInstance) -> Result<DVector<f64>> {
    let mut config = SolverConfig::new(SolverMode::ExactNewton, problem.l());
    config.epsilon = 1e-13 / problem.l();
    config.max_iterations = 200;
    let (x_star, _) = solve(problem, &DVector::zeros(problem.d()), &config)
        .map_err(|f| f.error)?;
    problem.metadata.x_star = Some(x_star.iter().copied().collect());
    Ok(x_star)
}

/// Solver settings carried by experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub mode: SolverMode,
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon0: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            mode: SolverMode::ExactNewton,
            epsilon: 1e-8,
            delta: 0.01,
            epsilon0: 0.01,
            max_iterations: 100,
        }
    }
}

impl SolverSettings {
    fn to_config(&self, l: f64, seed: u64) -> SolverConfig {
        let mut c = SolverConfig::new(self.mode, l);
        c.epsilon = self.epsilon;
        c.delta = self.delta;
        c.epsilon0 = self.epsilon0;
        c.max_iterations = self.max_iterations;
        c.seed = seed;
        c
    }
}

/// A full experiment: instance shape, γ grid, solver settings, output
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub r: f64,
    pub b_mode: BMode,
    pub c_constant: f64,
    pub l: f64,
    pub gamma_grid: Vec<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() {
            return Err(Error::config("gamma grid must be nonempty".to_string()));
        }
        if self.gamma_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::config("gamma grid values must lie in [0,1]".to_string()));
        }
        if self.n < self.d {
            return Err(Error::config(format!(
                "need n >= d, got n = {}, d = {}",
                self.n, self.d
            )));
        }
        Ok(())
    }
}

/// One γ grid point of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub x_opt: Vec<f64>,
    pub l_exp_at_opt: f64,
    pub l_ent_at_opt: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Warm start by exact Newton from the origin, then the configured mode at
/// full accuracy. Standalone solves and sweep rows share this path so the γ
/// endpoints agree bitwise.
pub fn solve_from_cold(
    problem: &ProblemInstance,
    settings: &SolverSettings,
    seed: u64,
) -> std::result::Result<(DVector<f64>, SolverTrace), Box<SolveFailure>> {
    let mut warm = settings.to_config(problem.l(), seed);
    warm.mode = SolverMode::ExactNewton;
    warm.epsilon = settings.epsilon.max(1e-3);
    let (x_warm, _) = solve(problem, &DVector::zeros(problem.d()), &warm)?;
    let config = settings.to_config(problem.l(), seed);
    solve(problem, &x_warm, &config)
}

/// Runs the γ sweep. Per-row failures are recorded in the row and the sweep
/// continues; files are written only when the config names an output
/// directory.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let base = generate_instance(
        config.n,
        config.d,
        config.r,
        config.seed,
        config.b_mode,
        config.c_constant,
        config.l,
        config.gamma_grid[0],
    )?;
    let mut rows = Vec::with_capacity(config.gamma_grid.len());
    for (idx, &gamma) in config.gamma_grid.iter().enumerate() {
        let row_seed = config.seed ^ idx as u64;
        let problem = base.with_gamma(gamma)?;
        let row = match solve_from_cold(&problem, &config.solver, row_seed) {
            Ok((x, trace)) => {
                let eval = evaluate(&problem, &x)?;
                SweepRow {
                    gamma,
                    x_opt: x.iter().copied().collect(),
                    l_exp_at_opt: eval.l_exp,
                    l_ent_at_opt: eval.l_ent,
                    iterations: trace.iterations(),
                    converged: trace.status == TerminalStatus::Converged,
                    error: None,
                }
            }
            Err(failure) => SweepRow {
                gamma,
                x_opt: Vec::new(),
                l_exp_at_opt: f64::NAN,
                l_ent_at_opt: f64::NAN,
                iterations: failure.trace.iterations(),
                converged: false,
                error: Some(failure.error.to_string()),
            },
        };
        rows.push(row);
    }
    let result = SweepResult { rows };
    if let Some(dir) = &config.out_dir {
        io::save_sweep(&result, dir)?;
    }
    Ok(result)
}
