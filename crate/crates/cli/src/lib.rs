//! The `fdm` command line: forward solves, optimizations and gradient
//! checks on JSON network and job files.
//!
//! Exit codes: 0 on success, 1 for parse and validation errors, 2 for
//! numerical failures. Errors go to stderr as one JSON object per line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fdm_core::adjoint::{finite_difference_gradient_with, max_relative_error, value_and_grad};
use fdm_core::io::{load_job, load_network, Job, ResultsFile};
use fdm_core::optimizer::Iteration;
use fdm_core::{
    export_obj, optimize_with, save_results, EquilibriumModel, FdmError, LossSpec, Method,
    OptimizerConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Components whose analytic and numeric derivatives differ by at most this
/// count as agreeing in `gradcheck`.
const GRADCHECK_ABS_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "fdm", version, about = "Force density form-finding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the equilibrium of a network file.
    Solve {
        network: PathBuf,
        /// Results JSON; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        obj: Option<PathBuf>,
    },
    /// Fit the parameters of a job file to its goals.
    Optimize {
        job: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        obj: Option<PathBuf>,
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Print the loss every 100 iterations.
        #[arg(long)]
        verbose: bool,
    },
    /// Compare the adjoint gradient with central differences.
    Gradcheck {
        job: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Sgd,
    Adam,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Sgd => Method::Sgd,
            MethodArg::Adam => Method::Adam,
        }
    }
}

/// Command-line overrides, applied on top of the job file settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub max_iter: Option<usize>,
    pub lr: Option<f64>,
    pub method: Option<Method>,
}

impl Overrides {
    pub fn apply(&self, mut config: OptimizerConfig) -> OptimizerConfig {
        if let Some(n) = self.max_iter {
            config.max_iterations = n;
        }
        if let Some(lr) = self.lr {
            config.learning_rate = lr;
        }
        if let Some(m) = self.method {
            config.method = m;
        }
        config
    }
}

enum Failure {
    Core(FdmError),
    /// An optimization cut short mid-run; always a numerical failure.
    Numerical(FdmError),
    Usage(String),
    Output(std::io::Error),
}

impl From<FdmError> for Failure {
    fn from(e: FdmError) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Output(e)
    }
}

impl Failure {
    fn report(&self, err: &mut dyn Write) -> i32 {
        let (kind, message, code) = match self {
            Failure::Core(e) => (
                e.kind(),
                e.to_string(),
                if e.is_numerical() {
                    EXIT_NUMERICAL
                } else {
                    EXIT_INVALID
                },
            ),
            Failure::Numerical(e) => (e.kind(), e.to_string(), EXIT_NUMERICAL),
            Failure::Usage(m) => ("UsageError", m.clone(), EXIT_INVALID),
            Failure::Output(e) => ("IoError", e.to_string(), EXIT_INVALID),
        };
        let line = serde_json::json!({ "error": kind, "message": message });
        let _ = writeln!(err, "{line}");
        code
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ").to_string();
            return Failure::Usage(first).report(err);
        }
    };
    match run(cli.command, out) {
        Ok(code) => code,
        Err(f) => f.report(err),
    }
}

fn run(command: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Solve {
            network,
            out: path,
            obj,
        } => solve(&network, path.as_deref(), obj.as_deref(), out),
        Command::Optimize {
            job,
            out: path,
            obj,
            max_iter,
            lr,
            method,
            verbose,
        } => {
            let overrides = Overrides {
                max_iter,
                lr,
                method: method.map(Method::from),
            };
            optimize(
                &job,
                overrides,
                path.as_deref(),
                obj.as_deref(),
                verbose,
                out,
            )
        }
        Command::Gradcheck { job, h } => gradcheck(&job, h, out),
    }
}

fn emit(results: &ResultsFile, path: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => save_results(p, results)?,
        None => {
            let text = serde_json::to_string_pretty(results).map_err(std::io::Error::other)?;
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

fn solve(
    network: &Path,
    path: Option<&Path>,
    obj: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let loaded = load_network(network)?;
    let model = EquilibriumModel::new(loaded.network.clone());
    let state = model.solve(&loaded.theta)?.state;
    if let Some(obj) = obj {
        export_obj(obj, &loaded.network, &state)?;
    }
    let results = ResultsFile::new(
        &loaded.network,
        &loaded.ids,
        &loaded.theta,
        &state,
        None,
        None,
    );
    emit(&results, path, out)?;
    Ok(EXIT_OK)
}

fn loss_spec(job: &Job) -> Result<LossSpec, FdmError> {
    LossSpec::new(job.goals.clone())
}

fn optimize(
    job_path: &Path,
    overrides: Overrides,
    path: Option<&Path>,
    obj: Option<&Path>,
    verbose: bool,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let job = load_job(job_path)?;
    let spec = loss_spec(&job)?;
    let config = overrides.apply(job.config.clone());
    let loaded = &job.loaded;
    let model = EquilibriumModel::new(loaded.network.clone());

    let mut progress = Ok(());
    let trace = optimize_with(
        &model,
        &loaded.theta,
        &spec,
        &config,
        |it: &Iteration<'_>| {
            if verbose && progress.is_ok() && it.index.is_multiple_of(100) {
                progress = writeln!(
                    out,
                    "iter {:>6}  loss {:.9e}  grad {:.3e}",
                    it.index, it.loss, it.grad_norm
                );
            }
        },
    )?;
    progress?;
    if verbose {
        writeln!(
            out,
            "stopped after {} evaluations ({:?}), best loss {:.9e} at iteration {}",
            trace.loss_history.len(),
            trace.termination,
            trace.best_loss,
            trace.best_iteration
        )?;
    }

    if let Some(obj) = obj {
        export_obj(obj, &loaded.network, &trace.best_state)?;
    }
    let results = ResultsFile::new(
        &loaded.network,
        &loaded.ids,
        &trace.best_theta,
        &trace.best_state,
        Some(trace.best_loss),
        Some((&trace, &config)),
    );
    emit(&results, path, out)?;

    // The best parameters are saved either way, but a run cut short by the
    // numerics still reports failure.
    match trace.failure {
        Some(e) => Err(Failure::Numerical(e)),
        None => Ok(EXIT_OK),
    }
}

fn gradcheck(job_path: &Path, h: f64, out: &mut dyn Write) -> Result<i32, Failure> {
    let job = load_job(job_path)?;
    let spec = loss_spec(&job)?;
    let loaded = &job.loaded;
    let model = EquilibriumModel::new(loaded.network.clone());
    let (_, analytic, _) = value_and_grad(&model, &loaded.theta, &spec)?;
    let numeric = finite_difference_gradient_with(&model, &loaded.theta, &spec, h)?;
    let err = max_relative_error(&analytic, &numeric, GRADCHECK_ABS_TOL);
    writeln!(
        out,
        "max relative gradient error {:.3e} over {} components (h = {h:e})",
        err,
        analytic.flatten().len()
    )?;
    Ok(EXIT_OK)
}
