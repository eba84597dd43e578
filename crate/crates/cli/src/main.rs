//! `vaknh` command-line front end.
//!
//! Exit codes: 0 success, 1 usage / input / parse errors, 2 a failed
//! `check`, 3 numeric failures (singular matrices, domain errors).

// Negated comparisons such as `!(x > 0.0)` are used on purpose so that NaN
// is rejected together with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vaknh::comparison::{self, Candidate, PMode, Region, Sampler};
use vaknh::integrate::{self, Dynamics, Method, Options, State};
use vaknh::system::{verify_linearity, NhState, SystemDef, VakState};
use vaknh::{models, vakonomic, Error};

#[derive(Parser, Debug)]
#[command(name = "vaknh", version, about = "Vakonomic and nonholonomic constrained dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Admissibility, linearity and symplecticity at a probe state, plus the
    /// compatibility matrix.
    Check {
        /// Built-in model name or path to a system file.
        system: String,
        #[command(flatten)]
        probe: StateArgs,
    },
    /// Integrate one trajectory and write it as CSV.
    Integrate(IntegrateArgs),
    /// Comparison quantities at a single state, as JSON.
    Compare {
        system: String,
        #[command(flatten)]
        state: StateArgs,
        /// File of `name = expression` candidate functions.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Sample many states and summarise where the two flows agree.
    Scan(ScanArgs),
    /// List the built-in models and their documented facts.
    Catalog,
}

#[derive(Args, Debug, Default)]
struct StateArgs {
    /// Positions, comma separated, in declaration order.
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// Base velocities, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    v: Option<String>,
    /// Multipliers of the dependent coordinates, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DynamicsArg {
    Vak,
    Nh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PModeArg {
    Random,
    Legendre,
}

#[derive(Args, Debug)]
struct IntegrateArgs {
    system: String,
    #[arg(long, value_enum, default_value = "vak")]
    dynamics: DynamicsArg,
    #[command(flatten)]
    state: StateArgs,
    #[arg(long = "t-end")]
    t_end: f64,
    #[arg(long, value_enum, default_value = "rk45")]
    method: MethodArg,
    /// Fixed step for rk4.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long = "max-steps")]
    max_steps: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    system: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = comparison::DEFAULT_TOL)]
    tol: f64,
    #[arg(long = "p-mode", value_enum, default_value = "random")]
    p_mode: PModeArg,
    /// Interval `lo,hi` for every position (overrides the model's region).
    #[arg(long = "q-range", allow_hyphen_values = true)]
    q_range: Option<String>,
    #[arg(long = "v-range", allow_hyphen_values = true)]
    v_range: Option<String>,
    #[arg(long = "p-range", allow_hyphen_values = true)]
    p_range: Option<String>,
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Why a command stopped, mapped onto the exit code.
enum Failure {
    Usage(String),
    Library(Error),
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Library(Error::Io(e))
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Check { system, probe } => check(&system, &probe),
        Command::Integrate(args) => run_integrate(&args),
        Command::Compare {
            system,
            state,
            candidates,
        } => compare(&system, &state, candidates.as_deref()),
        Command::Scan(args) => run_scan(&args),
        Command::Catalog => catalog(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::CheckFailed) => ExitCode::from(2),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Library(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 1 })
        }
    }
}

// -- argument helpers ---------------------------------------------------------

fn reals(flag: &str, text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| usage(format!("--{flag}: `{t}` is not a finite real number")))
        })
        .collect()
}

fn sized(flag: &str, text: Option<&str>, expected: usize) -> Result<Option<Vec<f64>>, Failure> {
    let Some(text) = text else { return Ok(None) };
    let values = reals(flag, text)?;
    if values.len() != expected {
        return Err(usage(format!(
            "--{flag}: expected {expected} values, got {}",
            values.len()
        )));
    }
    Ok(Some(values))
}

fn required(flag: &str, value: Option<Vec<f64>>) -> Result<Vec<f64>, Failure> {
    value.ok_or_else(|| usage(format!("--{flag} is required")))
}

fn interval(flag: &str, text: &str) -> Result<(f64, f64), Failure> {
    match reals(flag, text)?.as_slice() {
        &[lo, hi] if lo <= hi => Ok((lo, hi)),
        _ => Err(usage(format!("--{flag}: expected `lo,hi` with lo <= hi"))),
    }
}

fn load_candidates(path: Option<&Path>) -> Result<Vec<Candidate>, Failure> {
    match path {
        Some(p) => Ok(comparison::parse_candidates(&std::fs::read_to_string(p)?)?),
        None => Ok(Vec::new()),
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn vak_state(sys: &SystemDef, args: &StateArgs) -> Result<VakState, Failure> {
    Ok(VakState::new(
        required("q", sized("q", args.q.as_deref(), sys.n())?)?,
        required("v", sized("v", args.v.as_deref(), sys.k())?)?,
        required("p", sized("p", args.p.as_deref(), sys.m())?)?,
    ))
}

fn fmt_row(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter()
        .map(|x| format!("{x:.16e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

// -- subcommands --------------------------------------------------------------

fn check(source: &str, probe: &StateArgs) -> Outcome {
    let sys = match models::resolve(source) {
        Ok(sys) => sys,
        Err(e @ Error::Admissibility { .. }) => {
            println!("admissibility: FAIL ({e})");
            return Err(Failure::CheckFailed);
        }
        Err(e @ Error::LinearityViolated { .. }) => {
            println!("admissibility: ok");
            println!("linearity: FAIL ({e})");
            return Err(Failure::CheckFailed);
        }
        Err(e) => return Err(e.into()),
    };
    let q = sized("q", probe.q.as_deref(), sys.n())?.unwrap_or_else(|| vec![1.0; sys.n()]);
    let v = sized("v", probe.v.as_deref(), sys.k())?.unwrap_or_else(|| vec![0.5; sys.k()]);
    let p = sized("p", probe.p.as_deref(), sys.m())?.unwrap_or_else(|| vec![1.0; sys.m()]);
    let s = VakState::new(q, v, p);
    let mut ok = true;

    println!("system: {} (n = {}, m = {})", sys.name(), sys.n(), sys.m());
    println!("admissibility: ok (no dependent velocity inside psi)");

    let report = verify_linearity(&sys, 32, 0)?;
    let consistent = report.linear == sys.declared_linear();
    ok &= consistent;
    println!(
        "linearity: {} (declared {}, verified {})",
        if consistent { "ok" } else { "FAIL" },
        sys.declared_linear(),
        report.linear
    );

    println!("probe: q = [{}], v = [{}], p = [{}]", fmt_row(s.q.clone()), fmt_row(s.v.clone()), fmt_row(s.p.clone()));
    let symp = vakonomic::symplectic_check(&sys, &s)?;
    ok &= symp.invertible;
    println!(
        "symplecticity: {} (det C-bar = {:.16e})",
        if symp.invertible { "ok" } else { "FAIL" },
        symp.det
    );

    if sys.declared_linear() {
        match vakonomic::compatibility_matrix(&sys, &s.q) {
            Ok(c) => {
                let det = c.clone().lu().determinant();
                println!("compatibility matrix (det = {det:.16e}):");
                for row in c.row_iter() {
                    println!("  [{}]", fmt_row(row.iter().copied()));
                }
            }
            Err(e @ Error::SingularHessian { .. }) => println!("compatibility matrix: undefined ({e})"),
            Err(e) => return Err(e.into()),
        }
    } else {
        println!("compatibility matrix: not defined for constraints nonlinear in the velocities");
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

fn run_integrate(args: &IntegrateArgs) -> Outcome {
    let method = match args.method {
        MethodArg::Rk4 => {
            if args.rtol.is_some() || args.atol.is_some() {
                return Err(usage("--rtol/--atol apply to rk45 only"));
            }
            Method::Rk4 {
                dt: args.dt.unwrap_or(integrate::DEFAULT_DT),
            }
        }
        MethodArg::Rk45 => {
            if args.dt.is_some() {
                return Err(usage("--dt applies to rk4 only"));
            }
            Method::Rk45 {
                rtol: args.rtol.unwrap_or(integrate::DEFAULT_RTOL),
                atol: args.atol.unwrap_or(integrate::DEFAULT_ATOL),
            }
        }
    };
    if args.dynamics == DynamicsArg::Nh && args.state.p.is_some() {
        return Err(usage("--p is meaningless for nonholonomic dynamics"));
    }
    let sys = models::resolve(&args.system)?;
    let s0 = match args.dynamics {
        DynamicsArg::Vak => State::Vak(vak_state(&sys, &args.state)?),
        DynamicsArg::Nh => State::Nh(NhState::new(
            required("q", sized("q", args.state.q.as_deref(), sys.n())?)?,
            required("v", sized("v", args.state.v.as_deref(), sys.k())?)?,
        )),
    };
    let mut opts = Options::new(args.t_end, method);
    opts.candidates = load_candidates(args.candidates.as_deref())?;
    if let Some(n) = args.max_steps {
        opts.max_steps = n;
    }
    let traj = integrate::integrate(&sys, &s0, &opts)?;
    let mut out = sink(args.out.as_deref())?;
    integrate::write_csv(&sys, &traj, &mut out)?;
    out.flush()?;

    let conserved = match traj.dynamics {
        Dynamics::Vak => "H",
        Dynamics::Nh => "E_L",
    };
    let drift = integrate::drift_report(&sys, &traj);
    eprintln!(
        "{} steps, max |{conserved} drift| = {:.3e}",
        traj.times.len() - 1,
        drift.max(conserved).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn compare(source: &str, state: &StateArgs, candidates: Option<&Path>) -> Outcome {
    let sys = models::resolve(source)?;
    let s = vak_state(&sys, state)?;
    let candidates = load_candidates(candidates)?;
    comparison::validate_candidates(&sys, &candidates)?;
    let record = comparison::compare_state(&sys, &s, &candidates)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &record).map_err(Error::Json)?;
    writeln!(out)?;
    Ok(())
}

fn run_scan(args: &ScanArgs) -> Outcome {
    if args.p_mode == PModeArg::Legendre && args.p_range.is_some() {
        return Err(usage("--p-range conflicts with --p-mode legendre"));
    }
    if !(args.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let sys = models::resolve(&args.system)?;
    let fallback = Region {
        q: vec![(-1.0, 1.0); sys.n()],
        v: vec![(-1.0, 1.0); sys.k()],
        p: vec![(-1.0, 1.0); sys.m()],
    };
    let mut region = models::region(&args.system).unwrap_or(fallback);
    if let Some(r) = &args.q_range {
        region.q = vec![interval("q-range", r)?; sys.n()];
    }
    if let Some(r) = &args.v_range {
        region.v = vec![interval("v-range", r)?; sys.k()];
    }
    if let Some(r) = &args.p_range {
        region.p = vec![interval("p-range", r)?; sys.m()];
    }
    let sampler = Sampler {
        count: args.samples,
        seed: args.seed,
        region,
        p_mode: match args.p_mode {
            PModeArg::Random => PMode::Random,
            PModeArg::Legendre => PMode::Legendre,
        },
    };
    let candidates = load_candidates(args.candidates.as_deref())?;
    let report = comparison::scan(&sys, &sampler, &candidates, args.tol)?;
    let mut out = sink(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(Error::Json)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn catalog() -> Outcome {
    for name in models::NAMES {
        let sys = models::builtin(name)?;
        println!(
            "{name}: n = {}, m = {}, {}",
            sys.n(),
            sys.m(),
            if sys.declared_linear() { "linear" } else { "nonlinear" }
        );
        for f in models::facts(name) {
            println!("  {}: {}", f.id, f.claim);
        }
    }
    Ok(())
}
