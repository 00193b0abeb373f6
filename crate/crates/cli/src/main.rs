use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdsim_core::calibration::{optimize, rmspe, ExperimentalCurve, GrainObjective, DEFAULT_FLOOR};
use tdsim_core::config::ConfigFile;
use tdsim_core::curve::normalize_curve;
use tdsim_core::grain::{self, simulate_grain_tds};
use tdsim_core::provenance::{run_checks, GitRepository, GovernancePolicy, EXIT_USAGE};
use tdsim_core::slab::{self, simulate_slab_tds};
use tdsim_core::{Error, Normalization, ReleaseCurve};

#[derive(Parser)]
#[command(name = "tdsim", version, about = "Thermal desorption simulation and calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate release from a spherical grain.
    SimulateGrain(RunArgs),
    /// Simulate D2 and D2O release from an oxidized slab.
    SimulateSlab {
        #[command(flatten)]
        run: RunArgs,
        /// Oxide thickness in nm; overrides the config.
        #[arg(long)]
        oxide_nm: Option<f64>,
    },
    /// Fit the grain kinetic parameters to a measured curve.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print the RMSPE between a simulated and a reference curve.
    Compare {
        /// Simulated curve (time_s,temperature_K,release_rate).
        simulated: PathBuf,
        /// Reference curve (temperature_K,normalized_rate) or another
        /// simulated curve.
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FLOOR)]
        floor: f64,
    },
    /// Check commit provenance trailers, session logs and AGENTS.md.
    Provenance {
        /// Revision range, e.g. `main..HEAD`.
        #[arg(long, default_value = "HEAD")]
        rev_range: String,
        /// Policy file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Repository root.
        #[arg(long, default_value = ".")]
        repo: PathBuf,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a config key, `section.key=value` or `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn load_config(run: &RunArgs, section: &str) -> Result<ConfigFile, Failure> {
    let mut config = match &run.config {
        Some(path) => ConfigFile::load(path).map_err(usage)?,
        None => ConfigFile::default(),
    };
    for o in &run.overrides {
        config.set(o, section).map_err(usage)?;
    }
    Ok(config)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(path, e))?))
}

fn simulate_grain(run: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(run, "grain")?.grain().map_err(usage)?;
    let result = simulate_grain_tds(&cfg.params, &cfg.mesh, &grain::default_controller())?;
    result.curve.write_csv(create(&run.out, "release.csv")?)?;
    let normalized = normalize_curve(&result.curve, Normalization::UnitPeak)?;
    normalized.write_csv(create(&run.out, "release_normalized.csv")?)?;
    let peak = result.curve.peak().ok_or_else(|| Failure::Run("empty release curve".into()))?;
    println!("peak {:.1} K, rate {:.4e} /s", peak.temperature, peak.rate);
    println!("released {:.6e} of {:.6e}, balance error {:.2e}", result.released(), result.initial_inventory(), result.balance_error());
    println!("steps {} accepted, {} rejected", result.accepted_steps, result.rejected_steps);
    Ok(())
}

fn simulate_slab(run: &RunArgs, oxide_nm: Option<f64>) -> Result<(), Failure> {
    let mut config = load_config(run, "slab")?;
    if let Some(v) = oxide_nm {
        config.set(&format!("slab.l_ox_nm={v:e}"), "slab").map_err(usage)?;
    }
    let cfg = config.slab().map_err(usage)?;
    let result = simulate_slab_tds(&cfg.params, &cfg.mesh, &slab::default_controller())?;
    result.save(&run.out)?;
    let (d2, d2o) = result.cumulative_release();
    println!("oxide {:.2} nm, {} cells", cfg.params.oxide_thickness * 1e9, result.mesh.cell_count());
    println!("released D2 {d2:.4e} /m2, D2O {d2o:.4e} /m2, ratio {:.4}", d2o / d2);
    println!(
        "oxygen remaining {:.3e} of {:.3e}",
        result.final_inventory().oxygen,
        result.initial_inventory().oxygen
    );
    println!(
        "balance error D {:.2e}, O {:.2e}",
        result.deuterium_balance_error(),
        result.oxygen_balance_error()
    );
    Ok(())
}

fn calibrate(run: &RunArgs, seed: u64) -> Result<(), Failure> {
    let config = load_config(run, "calibration")?;
    let grain_cfg = config.grain().map_err(usage)?;
    let cal = config.calibration().map_err(usage)?;
    let fixture_path = cal
        .fixture
        .ok_or_else(|| Failure::Usage("[calibration] fixture is required".into()))?;
    let fixture = ExperimentalCurve::load_csv(&fixture_path).map_err(usage)?;
    let mut objective = GrainObjective::new(grain_cfg.params, fixture);
    objective.mesh = grain_cfg.mesh;
    objective.penalty = cal.penalty;
    objective.floor = cal.floor;
    let settings = tdsim_core::calibration::OptimizerSettings { seed, ..cal.optimizer };
    let result = optimize(|p: &[f64]| objective.evaluate(p), objective.space.len(), &settings)?;
    result.write_history_csv(Some(&objective.space), create(&run.out, "history.csv")?)?;
    result.write_best(&objective.space, create(&run.out, "best.txt")?)?;
    let best = result.best();
    println!("{} evaluations, best score {:.4} (iteration {})", result.history.len(), best.score, best.iteration);
    for (d, v) in objective.space.dimensions().iter().zip(objective.space.to_physical(&best.point)?) {
        println!("  {} = {v:.4e}", d.name);
    }
    Ok(())
}

fn read_reference(path: &Path) -> Result<ExperimentalCurve, Failure> {
    let head = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = head.lines().find(|l| !l.trim_start().starts_with('#')).unwrap_or("");
    if first.trim_start().starts_with("temperature_K") {
        return Ok(ExperimentalCurve::load_csv(path)?);
    }
    let curve = normalize_curve(&ReleaseCurve::load_csv(path, Normalization::Raw)?, Normalization::UnitPeak)?;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(curve.samples().len());
    for s in curve.samples() {
        match points.last() {
            Some(&(t, _)) if s.temperature <= t => continue,
            _ => points.push((s.temperature, s.rate)),
        }
    }
    Ok(ExperimentalCurve::new(points, path.display().to_string())?)
}

fn compare(simulated: &Path, reference: &Path, floor: f64) -> Result<(), Failure> {
    let sim = normalize_curve(&ReleaseCurve::load_csv(simulated, Normalization::Raw)?, Normalization::UnitPeak)?;
    let reference = read_reference(reference)?;
    println!("{:.4}", rmspe(&sim, &reference, floor)?);
    Ok(())
}

fn provenance(rev_range: &str, config: Option<&Path>, repo: &Path, json: bool) -> Result<i32, Failure> {
    let policy = match config {
        Some(p) => GovernancePolicy::load(p).map_err(usage)?,
        None => GovernancePolicy::default(),
    };
    let reader = GitRepository::open(repo).map_err(usage)?;
    let report = run_checks(rev_range, &reader, &policy).map_err(usage)?;
    if json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.render_text());
    }
    Ok(report.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::SimulateGrain(run) => simulate_grain(run).map(|_| 0),
        Command::SimulateSlab { run, oxide_nm } => simulate_slab(run, *oxide_nm).map(|_| 0),
        Command::Calibrate { run, seed } => calibrate(run, *seed).map(|_| 0),
        Command::Compare {
            simulated,
            reference,
            floor,
        } => compare(simulated, reference, *floor).map(|_| 0),
        Command::Provenance {
            rev_range,
            config,
            repo,
            json,
        } => provenance(rev_range, config.as_deref(), repo, *json),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `tdsim --help` for usage");
            ExitCode::from(EXIT_USAGE as u8)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
