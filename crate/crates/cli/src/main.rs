//! `gsi`: simulate datasets, run the estimator in one of its three modes,
//! score trajectories and corrupt GNSS files.
//!
//! Exit codes are stable:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | bad command line |
//! | 3 | invalid configuration |
//! | 4 | malformed or insufficient data |
//! | 5 | estimator or solver failure |
//! | 6 | file system error |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gsi_core::config::{Config, ConfigError};
use gsi_core::estimator::{run_mode, EstimatorError, GnssFix, RunMode, RunStats};
use gsi_core::evaluation::{
    aligned_positions, ate, compare_runs, AlignMode, EvalError, TimedPose, Trajectory,
    DEFAULT_MAX_TIME_OFFSET,
};
use gsi_core::geometry::{geodetic_to_enu, RigidTransform3, Rotation3};
use gsi_core::io::{self, DataError, GROUND_TRUTH_FILE};
use gsi_core::simulator::{corrupt_gnss, simulate, SimError};
use nalgebra::Vector3;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gsi",
    version,
    about = "GNSS-stereo-inertial estimation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate {
        /// TOML configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `scenario.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Estimate a trajectory from a dataset directory.
    Run {
        /// Dataset directory holding imu.csv, frames.csv and gnss.csv.
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Recorded in the report; the estimator itself is deterministic.
        #[arg(long)]
        seed: Option<u64>,
        /// Trajectory file (TUM format).
        #[arg(long)]
        output: PathBuf,
        /// Run report (JSON); defaults to `<output>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score estimates against a reference trajectory.
    Evaluate {
        /// Estimate files, either `path` or `name=path`. Repeated names are
        /// repetitions of one system.
        #[arg(required = true)]
        estimates: Vec<String>,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = ReferenceFormat::Tum)]
        reference_format: ReferenceFormat,
        #[arg(long, value_enum, default_value_t = AlignArg::Rigid)]
        align: AlignArg,
        #[arg(long, default_value_t = DEFAULT_MAX_TIME_OFFSET)]
        max_time_offset: f64,
        /// Supplies the lever arm when the reference is a GNSS file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Recorded in the report; evaluation is deterministic.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Add isotropic Gaussian noise to the fixes of a GNSS file.
    CorruptGnss {
        #[arg(long)]
        input: PathBuf,
        /// Per-axis standard deviation, meters.
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "vi_only")]
    Vi,
    #[value(alias = "tight_gnss")]
    Tight,
    #[value(alias = "loose_gnss")]
    Loose,
}

impl From<ModeArg> for RunMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Vi => RunMode::ViOnly,
            ModeArg::Tight => RunMode::TightGnss,
            ModeArg::Loose => RunMode::LooseGnss,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    Rigid,
    Sim3,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceFormat {
    Tum,
    Gnss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Failure {
    Config = 3,
    Data = 4,
    Solver = 5,
    Io = 6,
}

#[derive(Debug)]
struct CliError {
    kind: Failure,
    message: String,
}

impl CliError {
    fn new(kind: Failure, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Io { .. } => Failure::Io,
            DataError::Format { .. } => Failure::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(Failure::Config, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::new(Failure::Config, e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        let kind = match e {
            EstimatorError::InvalidConfig(_) => Failure::Config,
            EstimatorError::Unsorted { .. }
            | EstimatorError::Gap { .. }
            | EstimatorError::InsufficientData(_) => Failure::Data,
            EstimatorError::Geometry(_)
            | EstimatorError::Preintegration(_)
            | EstimatorError::Solver(_) => Failure::Solver,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::new(Failure::Data, e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(path) => {
            let text = io::read_text(path)?;
            Config::from_toml(&text)
                .map_err(|e| CliError::new(Failure::Config, format!("{}: {e}", path.display())))
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(Failure::Io, format!("{}: {e}", dir.display())))
}

fn cmd_simulate(config: Option<&Path>, seed: Option<u64>, output: &Path) -> Result<(), CliError> {
    let mut config = load_config(config)?;
    if let Some(seed) = seed {
        config.scenario.seed = seed;
    }
    let rig = config.rig();
    let dataset = simulate(
        &config.scenario,
        &config.imu,
        &rig.camera,
        &rig.lever_arm,
        &rig.gravity,
    )?;
    io::write_dataset(output, &dataset)?;
    let truth = dataset.truth_trajectory();
    let duration = match (truth.poses().first(), truth.poses().last()) {
        (Some(a), Some(b)) => b.timestamp - a.timestamp,
        _ => 0.0,
    };
    let observations: usize = dataset.frames.iter().map(|f| f.observations.len()).sum();
    println!("scenario seed {}", config.scenario.seed);
    println!("duration      {duration:.3} s");
    println!("imu samples   {}", dataset.imu.len());
    println!(
        "frames        {} ({} observations, {} landmarks)",
        dataset.frames.len(),
        observations,
        dataset.landmarks.len()
    );
    println!("gnss fixes    {}", dataset.gnss.len());
    println!("truth poses   {}", truth.len());
    Ok(())
}

#[derive(Serialize)]
struct RunReport {
    mode: RunMode,
    seed: Option<u64>,
    poses: usize,
    /// Share of keyframes carrying a GNSS fix.
    gnss_coverage: f64,
    stats: RunStats,
    /// ATE against the dataset's ground truth when the file is present.
    ground_truth_rmse: Option<f64>,
}

fn cmd_run(
    dataset: &Path,
    mode: RunMode,
    config: Option<&Path>,
    seed: Option<u64>,
    output: &Path,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config)?;
    let streams = io::read_dataset(dataset, mode != RunMode::ViOnly)?;
    let mut records = streams.records();
    if mode == RunMode::ViOnly {
        records.retain(|r| !matches!(r, gsi_core::simulator::SensorRecord::Gnss(_)));
    }
    let rig = config.rig();
    log::info!("running {mode:?} on {} records", records.len());
    let out = run_mode(&records, &rig, &config.estimator, &config.loose, mode)?;
    io::write_text(output, &io::format_tum(&out.trajectory))?;

    let truth_path = dataset.join(GROUND_TRUTH_FILE);
    let ground_truth_rmse = if truth_path.exists() {
        let truth = io::load(&truth_path, io::parse_tum)?;
        ate(
            &out.trajectory,
            &truth,
            DEFAULT_MAX_TIME_OFFSET,
            AlignMode::Rigid,
        )
        .ok()
        .map(|r| r.rmse)
    } else {
        None
    };
    let summary = RunReport {
        mode,
        seed,
        poses: out.trajectory.len(),
        gnss_coverage: out.stats.gnss_coverage,
        stats: out.stats,
        ground_truth_rmse,
    };
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut name = output.as_os_str().to_owned();
        name.push(".report.json");
        PathBuf::from(name)
    });
    let json = serde_json::to_string_pretty(&summary).expect("report serializes");
    io::write_text(&report_path, &(json + "\n"))?;
    println!(
        "{} poses, {} keyframes, gnss coverage {:.3}",
        summary.poses, summary.stats.keyframes, summary.gnss_coverage
    );
    if let Some(rmse) = ground_truth_rmse {
        println!("ate vs ground truth {rmse:.4} m");
    }
    Ok(())
}

/// GNSS fixes as a position-only trajectory in the ENU frame of the first fix.
fn gnss_reference(fixes: &[GnssFix]) -> Result<Trajectory, CliError> {
    let origin = fixes
        .first()
        .ok_or_else(|| CliError::new(Failure::Data, "reference GNSS file holds no fixes"))?
        .geodetic;
    let poses = fixes
        .iter()
        .map(|f| TimedPose {
            timestamp: f.timestamp,
            pose: RigidTransform3::new(
                Rotation3::identity(),
                geodetic_to_enu(&f.geodetic, &origin),
            ),
        })
        .collect();
    Ok(Trajectory::new(poses)?)
}

/// Moves every pose to the antenna so it can be compared with GNSS.
fn to_antenna(trajectory: &Trajectory, lever_arm: &Vector3<f64>) -> Trajectory {
    let poses = trajectory
        .poses()
        .iter()
        .map(|p| TimedPose {
            timestamp: p.timestamp,
            pose: RigidTransform3::new(p.pose.rotation, p.pose.transform_point(lever_arm)),
        })
        .collect();
    Trajectory::new(poses).expect("timestamps unchanged")
}

fn split_estimate(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    estimates: &[String],
    reference: &Path,
    format: ReferenceFormat,
    align: AlignArg,
    max_time_offset: f64,
    config: Option<&Path>,
    seed: Option<u64>,
    output: &Path,
) -> Result<(), CliError> {
    if !(max_time_offset.is_finite() && max_time_offset >= 0.0) {
        return Err(CliError::new(
            Failure::Config,
            format!("--max-time-offset must be non-negative, got {max_time_offset}"),
        ));
    }
    let reference_trajectory = match format {
        ReferenceFormat::Tum => io::load(reference, io::parse_tum)?,
        ReferenceFormat::Gnss => gnss_reference(&io::load(reference, io::parse_gnss_csv)?)?,
    };
    let lever_arm = Vector3::from(load_config(config)?.rig.lever_arm);
    let mut runs = Vec::with_capacity(estimates.len());
    for arg in estimates {
        let (name, path) = split_estimate(arg);
        let trajectory = io::load(&path, io::parse_tum)?;
        let trajectory = match format {
            ReferenceFormat::Tum => trajectory,
            ReferenceFormat::Gnss => to_antenna(&trajectory, &lever_arm),
        };
        runs.push((name, trajectory));
    }
    let mode = match align {
        AlignArg::Rigid => AlignMode::Rigid,
        AlignArg::Sim3 => AlignMode::Similarity,
    };
    let comparison = compare_runs(&runs, &reference_trajectory, max_time_offset, mode)?;

    create_dir(output)?;
    io::write_text(&output.join("comparison.csv"), &comparison.to_csv())?;
    let mut json: serde_json::Value =
        serde_json::from_str(&comparison.to_json()).expect("comparison is valid JSON");
    json["seed"] = serde_json::json!(seed);
    json["max_time_offset"] = serde_json::json!(max_time_offset);
    io::write_text(
        &output.join("comparison.json"),
        &(serde_json::to_string_pretty(&json).expect("report serializes") + "\n"),
    )?;
    for ((name, trajectory), row) in runs.iter().zip(&comparison.rows) {
        let file = format!("aligned_{name}_{}.csv", row.repetition);
        let rows = aligned_positions(trajectory, &row.report);
        io::write_text(&output.join(file), &io::format_aligned_csv(&rows))?;
    }

    println!(
        "{:<16} {:>4} {:>10} {:>10} {:>10} {:>6} {:>12}",
        "name", "rep", "rmse", "median", "max", "pairs", "smoothness"
    );
    for row in &comparison.rows {
        let r = &row.report;
        let smooth = row
            .smoothness
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>6} {:>12}",
            row.name, row.repetition, r.rmse, r.median, r.max, r.pairs, smooth
        );
    }
    for s in &comparison.summary {
        println!(
            "best {}: {:.4} m (run {} of {}), mean {:.4}, median {:.4}",
            s.name, s.best_rmse, s.best_repetition, s.runs, s.mean_rmse, s.median_rmse
        );
    }
    Ok(())
}

fn cmd_corrupt_gnss(input: &Path, sigma: f64, seed: u64, output: &Path) -> Result<(), CliError> {
    let fixes = io::load(input, io::parse_gnss_csv)?;
    let corrupted = corrupt_gnss(&fixes, sigma, seed)?;
    io::write_text(output, &io::format_gnss_csv(&corrupted))?;
    println!("{} fixes corrupted with sigma {sigma} m", corrupted.len());
    Ok(())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            config,
            seed,
            output,
        } => cmd_simulate(config.as_deref(), seed, &output),
        Command::Run {
            dataset,
            mode,
            config,
            seed,
            output,
            report,
        } => cmd_run(
            &dataset,
            mode.into(),
            config.as_deref(),
            seed,
            &output,
            report.as_deref(),
        ),
        Command::Evaluate {
            estimates,
            reference,
            reference_format,
            align,
            max_time_offset,
            config,
            seed,
            output,
        } => cmd_evaluate(
            &estimates,
            &reference,
            reference_format,
            align,
            max_time_offset,
            config.as_deref(),
            seed,
            &output,
        ),
        Command::CorruptGnss {
            input,
            sigma,
            seed,
            output,
        } => cmd_corrupt_gnss(&input, sigma, seed, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.kind as u8)
        }
    }
}
