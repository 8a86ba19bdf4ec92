//! Command-line driver: instance generation, single solves, γ sweeps, the
//! lemma-verification battery and the high-precision minimizer oracle.
//!
//! Exit codes: 0 success, 1 assertion failure in `check`, 2 input error,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use entreg::error::Error;
use entreg::harness::check::{run_check, CheckOptions, Mutation};
use entreg::harness::{
    self, attach_oracle, generate_instance, io, BMode, ExperimentConfig, SolverSettings,
};
use entreg::solver::{SolverMode, TerminalStatus};

#[derive(Parser)]
#[command(name = "entreg", version, about = "Entropy-regularized softmax regression solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ShapeArgs {
    /// Number of rows (outcomes).
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Number of columns (parameters).
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Radius bound R; the design is rescaled to ‖A‖ = R/2.
    #[arg(long, default_value_t = 1.5)]
    r: f64,
    /// Target-generation mode: simplex-random | one-hot | softmax-of-random-x.
    #[arg(long, default_value = "simplex-random")]
    b_mode: String,
    /// Weight constant C (canonical values 10, 100, 200).
    #[arg(long, default_value_t = 200.0)]
    c_constant: f64,
    /// Strong-convexity target l.
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    /// Trade-off parameter γ in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// exact | approx
    #[arg(long, default_value = "exact")]
    mode: String,
    /// Accuracy target ε (stopping rule ‖g‖ ≤ l·ε).
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Failure budget δ for the sampled iterations.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Spectral approximation parameter ε₀ for the sketch.
    #[arg(long, default_value_t = 0.01)]
    epsilon0: f64,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
}

impl SolverArgs {
    fn to_settings(&self) -> Result<SolverSettings, Error> {
        let mode = match self.mode.as_str() {
            "exact" => SolverMode::ExactNewton,
            "approx" => SolverMode::ApproxNewton,
            other => {
                return Err(Error::Config {
                    context: format!("unknown mode '{other}' (use exact|approx)"),
                })
            }
        };
        Ok(SolverSettings {
            mode,
            epsilon: self.eps,
            delta: self.delta,
            epsilon0: self.epsilon0,
            max_iterations: self.max_iterations,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded instance and write it as JSON.
    Gen {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output instance path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solve on a stored instance and write trace files.
    Solve {
        /// Instance JSON produced by `gen`.
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for trace.csv / trace.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve across a γ grid and write sweep.csv / sweep.json.
    Sweep {
        /// Experiment config JSON; flags below are ignored when present.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        shape: ShapeArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Comma-separated γ grid.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        gamma_grid: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the lemma-verification battery and write the report.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Negative-control mutation: none | flip-b2-hf.
        #[arg(long, default_value = "none")]
        mutation: String,
        /// Weight constant for the PSD-campaign instances; below 10 the
        /// precondition-gated rows are skipped.
        #[arg(long, default_value_t = 10.0)]
        c_constant: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute a high-precision minimizer and store it in the instance
    /// metadata.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        /// Defaults to rewriting the input file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InputShape { .. }
        | Error::Config { .. }
        | Error::Parse { .. }
        | Error::Version { .. }
        | Error::Io { .. } => 2,
        Error::Overflow { .. }
        | Error::Numerical { .. }
        | Error::Symmetry { .. }
        | Error::DegenerateWeight { .. }
        | Error::Rank { .. }
        | Error::IndefiniteHessian { .. }
        | Error::Precondition { .. } => 3,
    }
}

fn run() -> Result<u8, Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { shape, seed, out } => {
            let b_mode: BMode = shape.b_mode.parse()?;
            let problem = generate_instance(
                shape.n,
                shape.d,
                shape.r,
                seed,
                b_mode,
                shape.c_constant,
                shape.l,
                shape.gamma,
            )?;
            io::save_instance(&problem, &out)?;
            println!(
                "wrote instance n={} d={} gamma={} to {}",
                shape.n,
                shape.d,
                shape.gamma,
                out.display()
            );
            Ok(0)
        }
        Command::Solve {
            instance,
            solver,
            seed,
            out,
        } => {
            let problem = io::load_instance(&instance)?;
            let settings = solver.to_settings()?;
            match harness::solve_from_cold(&problem, &settings, seed) {
                Ok((x, trace)) => {
                    let eval = entreg::evaluate(&problem, &x)?;
                    println!(
                        "status={:?} iterations={} grad_norm={:.3e} loss={:.6e}",
                        trace.status,
                        trace.iterations(),
                        trace.records.last().map(|r| r.grad_norm).unwrap_or(f64::NAN),
                        eval.l_total
                    );
                    if let Some(dir) = out {
                        io::save_trace(&trace, &dir)?;
                        println!("wrote {}", dir.join("trace.csv").display());
                    }
                    if trace.status == TerminalStatus::NumericalFailure {
                        return Ok(3);
                    }
                    Ok(0)
                }
                Err(failure) => {
                    eprintln!("solve failed: {failure}");
                    Ok(exit_code_for(&failure.error))
                }
            }
        }
        Command::Sweep {
            config,
            shape,
            solver,
            gamma_grid,
            seed,
            out,
        } => {
            let cfg = match config {
                Some(path) => io::load_config(&path)?,
                None => {
                    let grid: Result<Vec<f64>, _> = gamma_grid
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect();
                    let grid = grid.map_err(|e| Error::Config {
                        context: format!("bad gamma grid: {e}"),
                    })?;
                    ExperimentConfig {
                        n: shape.n,
                        d: shape.d,
                        r: shape.r,
                        b_mode: shape.b_mode.parse()?,
                        c_constant: shape.c_constant,
                        l: shape.l,
                        gamma_grid: grid,
                        solver: solver.to_settings()?,
                        seed,
                        out_dir: out.clone(),
                    }
                }
            };
            let result = harness::run_sweep(&cfg)?;
            for row in &result.rows {
                println!(
                    "gamma={:<5} iters={:<3} converged={} L_exp={:.6e} L_ent={:.6e}",
                    row.gamma, row.iterations, row.converged, row.l_exp_at_opt, row.l_ent_at_opt
                );
            }
            if result.rows.iter().any(|r| r.error.is_some()) {
                return Ok(3);
            }
            Ok(0)
        }
        Command::Check {
            seed,
            mutation,
            c_constant,
            out,
        } => {
            let options = CheckOptions {
                seed,
                mutation: mutation.parse::<Mutation>()?,
                psd_constant: c_constant,
            };
            let report = run_check(&options)?;
            for record in &report.records {
                let verdict = if record.violations == 0 { "pass" } else { "FAIL" };
                println!(
                    "{verdict} {:<32} checked={:<5} skipped={:<3} violations={:<3} max_violation={:.3e}",
                    record.lemma, record.checked, record.skipped, record.violations, record.max_violation
                );
            }
            if let Some(path) = out {
                io::save_report(&report, &path)?;
                println!("wrote {}", path.display());
            }
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Oracle { instance, out } => {
            let mut problem = io::load_instance(&instance)?;
            let x_star = attach_oracle(&mut problem)?;
            let g = entreg::calculus::grad_total(&problem, &entreg::evaluate(&problem, &x_star)?)?;
            let target = out.unwrap_or(instance);
            io::save_instance(&problem, &target)?;
            println!(
                "oracle grad_norm={:.3e}; x_star stored in {}",
                g.g_total.norm(),
                target.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
