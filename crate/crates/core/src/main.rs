use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::{Level, LevelFilter, Log, Metadata, Record};

use mpslam_bounds::ekf::run_monte_carlo;
use mpslam_bounds::exec::Execution;
use mpslam_bounds::pcrlb::run_recursion;
use mpslam_bounds::report::{summary, write_csv};
use mpslam_bounds::scenario::Scenario;
use mpslam_bounds::{selfcheck, BoundsError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_SELF_CHECK: u8 = 4;

/// Seed of the invariant suite when `--seed` is not given.
const SELF_CHECK_SEED: u64 = 0x5e1f_c4ec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Error bounds only; deterministic, no random numbers drawn.
    Bounds,
    /// Bounds plus Monte-Carlo EKF errors.
    Validate,
}

/// Posterior Cramér-Rao bounds for multipath SLAM with distributed anchors.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, required_unless_present = "self_check")]
    scenario: Option<PathBuf>,
    /// CSV output path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Validate)]
    mode: Mode,
    /// Number of Monte-Carlo runs (overrides the scenario).
    #[arg(long)]
    mc_runs: Option<usize>,
    /// Random seed (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Run the finite-difference and PSD invariant suite and exit.
    #[arg(long)]
    self_check: bool,
}

struct StderrLogger;

impl Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Warn
    }

    fn log(&self, record: &Record) {
        if self.enabled(record.metadata()) {
            eprintln!(
                "{}: {}",
                record.level().as_str().to_lowercase(),
                record.args()
            );
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

enum Failure {
    Bounds(BoundsError),
    Io(io::Error),
}

impl From<BoundsError> for Failure {
    fn from(e: BoundsError) -> Self {
        Failure::Bounds(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn self_check(seed: u64) -> ExitCode {
    let outcomes = selfcheck::run_all(seed, Execution::default());
    for o in &outcomes {
        println!("{o}");
    }
    if outcomes.iter().all(|o| o.passed) {
        ExitCode::SUCCESS
    } else {
        for o in outcomes.iter().filter(|o| !o.passed) {
            eprintln!("violated invariant: {}: {}", o.name, o.detail);
        }
        ExitCode::from(EXIT_SELF_CHECK)
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli.scenario.as_ref().expect("enforced by clap");
    let mut scenario = Scenario::load(path)?;
    if let Some(runs) = cli.mc_runs {
        scenario.mc.runs = runs;
    }
    if let Some(seed) = cli.seed {
        scenario.mc.seed = seed;
    }

    let mut out: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let text = match cli.mode {
        Mode::Bounds => {
            let bounds = run_recursion(&scenario)?;
            write_csv(&mut out, &bounds, None)?;
            summary(&bounds, None, None)
        }
        Mode::Validate => {
            if scenario.mc.runs == 0 {
                return Err(BoundsError::InvalidScenario(
                    "validation needs at least one Monte-Carlo run".into(),
                )
                .into());
            }
            let report = run_monte_carlo(&scenario)?;
            write_csv(&mut out, &report.bounds, Some(&report.rmse))?;
            summary(&report.bounds, Some(&report.rmse), Some(report.runs))
        }
    };
    out.flush()?;
    eprint!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(LevelFilter::Warn));
    let cli = Cli::parse();
    if cli.self_check {
        return self_check(cli.seed.unwrap_or(SELF_CHECK_SEED));
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Bounds(e)) if e.is_numerical() => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Bounds(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
