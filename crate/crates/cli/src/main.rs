use std::path::PathBuf;
use std::process::{Command, ExitCode};

use adiabat::harness::{parse_config, run_experiment, ExperimentKind};
use adiabat::{linalg, Error};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adiabat", version, about = "Adiabatic-limit experiments on fibred waveguides")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fibre eigenbands λ0, λ1 and the gap along the base
    Bands(Common),
    /// Berry form, adiabatic potential and the spectrum of H_a
    Effective(Common),
    /// Low spectrum of the full operator
    Full(Common),
    /// Super-adiabatic projections, commutators and unitarity residuals
    Projections(Common),
    /// Eigenvalue gaps, Hausdorff distances and eigenfunction residuals
    Convergence(Common),
    /// Full versus effective time evolution
    Dynamics(Common),
    /// Invariant suite at reduced resolution
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma separated, strictly decreasing eps values
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Seed for the eigensolver start vectors
    #[arg(long)]
    seed: Option<u64>,
}

impl Cmd {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Cmd::Bands(c) => (ExperimentKind::Bands, c),
            Cmd::Effective(c) => (ExperimentKind::Effective, c),
            Cmd::Full(c) => (ExperimentKind::Full, c),
            Cmd::Projections(c) => (ExperimentKind::Projections, c),
            Cmd::Convergence(c) => (ExperimentKind::Convergence, c),
            Cmd::Dynamics(c) => (ExperimentKind::Dynamics, c),
            Cmd::Verify(c) => (ExperimentKind::Verify, c),
        }
    }
}

/// OpenBLAS reads its core type once at load time, so it has to be in the
/// environment before the process starts.
fn reexec_with_blas_core() -> Option<ExitCode> {
    if !cfg!(all(target_os = "linux", target_arch = "x86_64")) || std::env::var_os("OPENBLAS_CORETYPE").is_some() {
        return None;
    }
    let exe = std::env::current_exe().ok()?;
    let status = Command::new(exe).args(std::env::args_os().skip(1)).env("OPENBLAS_CORETYPE", "Haswell").status().ok()?;
    Some(ExitCode::from(status.code().unwrap_or(2) as u8))
}

fn run(cli: Cli) -> Result<bool, Error> {
    let (kind, args) = cli.command.split();
    linalg::blas_self_check()?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", args.config.display())]))?;
    let mut cfg = parse_config(&text)?;
    if let Some(eps) = &args.eps {
        cfg = cfg.with_epsilon(eps.clone())?;
    }
    if let Some(seed) = args.seed {
        cfg.numerics.eigen.seed = seed;
    }
    let seam = cfg.build_model(cfg.sweep.epsilon[0], cfg.numerics.n_x)?.periodicity_defect();
    if seam > 1e-8 {
        eprintln!("warning: profiles are not periodic on the base circle (seam mismatch {seam:.1e})");
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let report = run_experiment(&cfg, kind)?;
    print!("{}", report.summary());
    for p in report.write(&cfg, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    if let Some(code) = reexec_with_blas_core() {
        return code;
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("threshold check failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
