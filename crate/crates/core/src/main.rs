use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use galerkin_sc::harness::{run_selftest, run_study, OutputFormat, StudyConfig, StudyKind, StudyOutput};

#[derive(Parser)]
#[command(name = "galerkin-sc", version, about = "Superconvergence studies for Petrov-Galerkin eigenvalue approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sine-basis study of the advection-diffusion eigenproblem.
    SpectralStudy(Common),
    /// Nested subspaces on a nonnormal matrix testbed.
    BoundedStudy(Common),
    /// Arnoldi and two-sided Lanczos diagnostics.
    KrylovStudy(Common),
    /// Separation bounds and Sylvester solvers.
    SepBench(Common),
    /// Invariant suites at reduced sizes.
    Selftest(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for records and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn load_config(kind: StudyKind, c: &Common) -> Result<StudyConfig, String> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            if let Some(obj) = value.as_object_mut() {
                obj.entry("kind").or_insert(serde_json::to_value(kind).expect("kind serializes"));
            }
            let cfg: StudyConfig = serde_json::from_value(value).map_err(|e| e.to_string())?;
            if cfg.kind != kind {
                return Err(format!("config kind {:?} does not match the subcommand", cfg.kind));
            }
            cfg
        }
        None => StudyConfig::for_kind(kind),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn report(out: &StudyOutput, c: &Common) -> Result<(), String> {
    let format = match c.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    match &c.out {
        Some(dir) => out.write(dir, format).map_err(|e| e.to_string())?,
        None => match format {
            OutputFormat::Csv => print!("{}", out.csv_string().map_err(|e| e.to_string())?),
            OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&out.records).map_err(|e| e.to_string())?),
        },
    }
    for f in &out.summary.rate_fits {
        eprintln!("rate {:<14} slope {:>9.4} points {}", f.quantity, f.slope, f.points);
    }
    for ch in &out.summary.checks {
        let status = match (ch.passed, ch.asserted) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        eprintln!("{status} {}: {}", ch.name, ch.detail);
    }
    for f in &out.summary.failures {
        eprintln!("error {f}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, String> {
    let (kind, common) = match &cli.command {
        Command::SpectralStudy(c) => (Some(StudyKind::Spectral), c),
        Command::BoundedStudy(c) => (Some(StudyKind::Bounded), c),
        Command::KrylovStudy(c) => (Some(StudyKind::Krylov), c),
        Command::SepBench(c) => (Some(StudyKind::Sep), c),
        Command::Selftest(c) => (None, c),
    };
    faer::set_global_parallelism(faer::Par::Seq);
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.max(1))
        .build_global()
        .map_err(|e| e.to_string())?;
    let out = match kind {
        Some(k) => run_study(&load_config(k, common)?).map_err(|e| e.to_string())?,
        None => run_selftest(common.seed.unwrap_or(0)).map_err(|e| e.to_string())?,
    };
    report(&out, common)?;
    Ok(out.summary.passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
