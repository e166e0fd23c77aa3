//! `skewflow` command-line front end.
//!
//! Exit codes: 0 when every requested check passed, 2 on a verification
//! failure, 1 on usage or input errors.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod commands;
mod output;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{Evolution, Method, Settings, Tolerances};

#[derive(Parser, Debug)]
#[command(name = "skewflow", version, about = "Skew-symmetric operators, extensions and contractive semigroups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Deficiency indices, skew-symmetry and Cayley isometry checks.
    Analyze(Common),
    /// Build the extension for coupling `--theta` and check it.
    Extend(Common),
    /// Evolve the initial state and write trajectory.csv.
    Evolve(Common),
    /// Evolve, then check the weak solution identity.
    Verify(Common),
    /// Growing solution `e^t u0` against the semigroup solution.
    Witness(Common),
    /// Two semigroups (couplings +1 and `--theta`) from one initial state.
    Multiplicity(Common),
    /// Transport run with energy, mass and weak-residual checks.
    TransportRun(Common),
    /// Discrete flows against closed-form oracles.
    OracleCheck(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Operator spec (JSON). Optional for oracle-check.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for report.json and CSV files.
    #[arg(long, default_value = "skewflow-out")]
    out: PathBuf,
    #[arg(long, default_value_t = skewflow::hilbert::DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    skew_tol: f64,
    /// Bound on the quadratic form `(Bu, u)` for dissipativity.
    #[arg(long, default_value_t = 1e-12)]
    form_tol: f64,
    /// Weak-residual tolerance [default: 1e-5, transport 1e-4].
    #[arg(long)]
    gs_tol: Option<f64>,
    #[arg(long, default_value_t = 1e-14)]
    solver_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, value_enum, default_value_t = Method::Cayley)]
    method: Method,
    /// Keep every n-th state in trajectory.csv.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Time nodes for the weak residual [default: the trajectory grid].
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coupling V of the extension (scalar, or the diagonal of V).
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Splice time for the witness command.
    #[arg(long)]
    t0: Option<f64>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let positive = [
            ("--rank-tol", self.rank_tol),
            ("--skew-tol", self.skew_tol),
            ("--form-tol", self.form_tol),
            ("--gs-tol", self.gs_tol.unwrap_or(1.0)),
            ("--solver-tol", self.solver_tol),
            ("--dt", self.dt),
            ("--horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if self.stride == 0 {
            bail!("--stride must be at least 1");
        }
        if self.nt.is_some_and(|n| n < 3) {
            bail!("--nt must be at least 3");
        }
        if let Some(t) = self.theta {
            if !(t.abs() <= 1.0) {
                bail!("--theta must lie in [-1, 1], got {t}");
            }
        }
        if let Some(t0) = self.t0 {
            if !(t0.is_finite() && t0 >= 0.0) {
                bail!("--t0 must be non-negative, got {t0}");
            }
        }
        Ok(Settings {
            tol: Tolerances {
                rank_tol: self.rank_tol,
                skew_tol: self.skew_tol,
                form_tol: self.form_tol,
                gs_tol: self.gs_tol,
                solver_tol: self.solver_tol,
            },
            evolution: Evolution {
                method: self.method,
                dt: self.dt,
                horizon: self.horizon,
                stride: self.stride,
                n_t: self.nt,
            },
            seed: self.seed,
            theta: self.theta,
            t0: self.t0,
        })
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SKEWFLOW_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("SKEWFLOW_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("SKEWFLOW_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

enum Failure {
    Usage(anyhow::Error),
    Verification(anyhow::Error),
}

fn run(cli: Cli) -> std::result::Result<bool, Failure> {
    configure_threads().map_err(Failure::Usage)?;
    let (name, common) = match &cli.command {
        Command::Analyze(c) => ("analyze", c),
        Command::Extend(c) => ("extend", c),
        Command::Evolve(c) => ("evolve", c),
        Command::Verify(c) => ("verify", c),
        Command::Witness(c) => ("witness", c),
        Command::Multiplicity(c) => ("multiplicity", c),
        Command::TransportRun(c) => ("transport-run", c),
        Command::OracleCheck(c) => ("oracle-check", c),
    };
    let settings = common.settings().map_err(Failure::Usage)?;
    let loaded = match &common.input {
        Some(p) => Some(spec::load(p).map_err(Failure::Usage)?),
        None if name == "oracle-check" => None,
        None => return Err(Failure::Usage(anyhow::anyhow!("{name} needs --input <spec.json>"))),
    };
    let outcome = match (&cli.command, loaded.as_ref()) {
        (Command::OracleCheck(_), l) => commands::oracle_check(l, &settings),
        (Command::TransportRun(_), Some(l)) if l.model.kind() != "transport" => {
            return Err(Failure::Usage(anyhow::anyhow!(
                "transport-run needs an operator of kind \"transport\""
            )))
        }
        (cmd, Some(l)) => match cmd {
            Command::Analyze(_) => commands::analyze(l, &settings),
            Command::Extend(_) => commands::extend(l, &settings),
            Command::Evolve(_) => commands::evolve_cmd(l, &settings),
            Command::Verify(_) => commands::verify(l, &settings),
            Command::Witness(_) => commands::witness(l, &settings),
            Command::Multiplicity(_) => commands::multiplicity(l, &settings),
            Command::TransportRun(_) => commands::transport_run(l, &settings),
            Command::OracleCheck(_) => unreachable!(),
        },
        (_, None) => unreachable!(),
    }
    .map_err(Failure::Verification)?;
    output::write_all(&common.out, name, &settings, &outcome).map_err(Failure::Usage)?;
    if let Some(msg) = &outcome.message {
        eprintln!("skewflow {name}: {msg}");
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    // clap would exit with 2, which is reserved for verification failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Failure::Verification(e)) => {
            eprintln!("skewflow: verification failed: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("skewflow: {e:#}");
            ExitCode::from(1)
        }
    }
}
