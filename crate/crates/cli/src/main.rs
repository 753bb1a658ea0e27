use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qstt::scenario::{self, Scenario};
use qstt::session::{self, Session, ARTIFACTS};

/// Quantum-secured two-way time transfer: scenario runner.
#[derive(Parser)]
#[command(name = "qstt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a pass (or replay recorded events) and write the artifacts.
    #[command(after_long_help = scenario_help())]
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Skip the simulation and analyse a recorded events.csv.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Print the summary of a finished run.
    Report { dir: PathBuf },
    /// Run a grid of per-direction delays and tabulate the detection bound.
    AttackSweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Grid points per direction.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Largest delay, seconds.
        #[arg(long, default_value_t = 10e-9)]
        max_delay: f64,
    },
    /// Print the scenario reference with every default.
    Schema,
}

fn scenario_help() -> String {
    scenario::schema()
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, String> {
    let mut s = Scenario::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run(path: &Path, seed: Option<u64>, out: &Path, events: Option<&Path>) -> Result<ExitCode, String> {
    let s = load(path, seed)?;
    let session: Session = match events {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let log = qstt::io::read_events(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
            session::replay(&s, log)
        }
        None => session::run(&s),
    }
    .map_err(|e| e.to_string())?;
    session.write_artifacts(out).map_err(|e| e.to_string())?;
    print!("{}", session.report.summary());
    Ok(ExitCode::from(session.report.session.verdict.exit_code() as u8))
}

fn report(dir: &Path) -> Result<ExitCode, String> {
    if !dir.is_dir() {
        return Err(format!("{} is not a directory", dir.display()));
    }
    let missing: Vec<&str> = ARTIFACTS.iter().copied().filter(|a| !dir.join(a).is_file()).collect();
    if !missing.is_empty() {
        return Err(format!("{}: missing {}", dir.display(), missing.join(", ")));
    }
    let r = session::read_report(dir).map_err(|e| e.to_string())?;
    print!("{}", r.summary());
    Ok(ExitCode::from(r.session.verdict.exit_code() as u8))
}

fn sweep(path: &Path, seed: Option<u64>, out: &Path, steps: usize, max_delay: f64) -> Result<ExitCode, String> {
    if steps < 2 || !(max_delay > 0.0) {
        return Err("need at least 2 steps and a positive max delay".into());
    }
    let s = load(path, seed)?;
    let grid: Vec<f64> = (0..steps).map(|i| max_delay * i as f64 / (steps - 1) as f64).collect();
    let rows = session::attack_sweep(&s, &grid, &grid).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let file = std::fs::File::create(out.join("sweep.csv")).map_err(|e| e.to_string())?;
    session::write_sweep(std::io::BufWriter::new(file), &rows).map_err(|e| e.to_string())?;
    let bound = s.policy.offset_bound();
    let missed = rows
        .iter()
        .filter(|r| r.delta_offset.abs() > bound && r.verdict != qstt::security::Verdict::Compromised)
        .count();
    println!("{} scenarios; bound L/c = {:.1} ps; undetected beyond bound: {missed}", rows.len(), bound * 1e12);
    Ok(if missed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, out, events } => run(scenario, *seed, out, events.as_deref()),
        Command::Report { dir } => report(dir),
        Command::AttackSweep { scenario, seed, out, steps, max_delay } => sweep(scenario, *seed, out, *steps, *max_delay),
        Command::Schema => {
            print!("{}", scenario::schema());
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
