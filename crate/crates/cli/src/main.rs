//! `dockport` command-line interface.

// `!(x > 0.0)` is used deliberately so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod estimate;
mod eval;
mod manifest;
mod overlay;
mod sensitivity;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dockport::filters::Modality;
use dockport::geometry::CameraIntrinsics;

use error::CliError;
use estimate::{EstimatePlan, Overrides};
use eval::{resolve_camera, EvalPlan};
use manifest::{manifest_path_for, RunManifest};
use sensitivity::SensitivityPlan;
use simulate::SimulatePlan;

#[derive(Parser)]
#[command(name = "dockport", version, about = "Docking-port detection and 6-DoF pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (frames, masks, poses, optional events).
    Simulate(SimulateArgs),
    /// Estimate per-frame poses over a dataset.
    Estimate(EstimateArgs),
    /// Compare estimates with ground truth and write an accuracy report.
    Eval(EvalArgs),
    /// Tabulate the inclination sensitivity bound.
    Sensitivity(SensitivityArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` dataset configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also simulate a PORTEVT1 event stream.
    #[arg(long = "with-events")]
    with_events: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Output estimates CSV.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mask filter strategy: classical, cnn or ground-truth.
    #[arg(long, default_value = "classical")]
    filter: String,
    /// PORTCNN1 weight files (one per target), for `--filter cnn`.
    #[arg(long)]
    weights: Vec<PathBuf>,
    #[arg(long, default_value = "rgb", value_parser = parse_modality)]
    modality: Modality,
    /// Events per histogram in event mode.
    #[arg(long)]
    events: Option<usize>,
    /// Minimum skeleton pixel count.
    #[arg(long = "gamma-s")]
    gamma_s: Option<usize>,
    /// RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write ellipse / reflector overlays into this directory.
    #[arg(long = "emit-overlays")]
    emit_overlays: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimates CSV written by `estimate`.
    #[arg(long)]
    estimates: PathBuf,
    /// Ground-truth poses CSV.
    #[arg(long)]
    gt: PathBuf,
    /// Report path; `.csv` selects CSV, anything else the text table.
    #[arg(long)]
    out: PathBuf,
    /// Camera intrinsics (defaults to `camera.txt` beside the ground truth).
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Temporal outlier threshold for rows without a stored verdict.
    #[arg(long, default_value_t = 15.0)]
    threshold: f64,
}

#[derive(Args)]
struct SensitivityArgs {
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Camera intrinsics (defaults to the built-in sensor).
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Ring radius in metres.
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    /// Comma-separated distances in metres.
    #[arg(long, value_delimiter = ',')]
    distances: Vec<f64>,
    /// Comma-separated inclinations in degrees.
    #[arg(long, value_delimiter = ',')]
    inclinations: Vec<f64>,
    /// Image-space noise level in pixels.
    #[arg(long = "pixel-noise", default_value_t = 1.0)]
    pixel_noise: f64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run manifest written by an earlier command.
    manifest: PathBuf,
    /// Write the primary output here instead of the recorded path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for `estimate` replays.
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse()
}

/// A resolved command: everything needed to run and to replay it.
enum Plan {
    Simulate(SimulatePlan),
    Estimate(EstimatePlan),
    Eval(EvalPlan),
    Sensitivity(SensitivityPlan),
}

impl Plan {
    fn from_command(cmd: Command) -> Result<Self, CliError> {
        Ok(match cmd {
            Command::Simulate(a) => Self::Simulate(SimulatePlan::new(a.config.as_deref(), a.out, a.seed, a.with_events)?),
            Command::Estimate(a) => Self::Estimate(EstimatePlan::new(
                a.dataset,
                a.out,
                a.config.as_deref(),
                a.filter,
                a.modality,
                a.weights,
                Overrides {
                    events: a.events,
                    gamma_s: a.gamma_s,
                    seed: a.seed,
                },
                a.emit_overlays,
                a.jobs,
            )?),
            Command::Eval(a) => Self::Eval(EvalPlan {
                camera: resolve_camera(a.camera.as_deref(), &a.gt)?,
                estimates: a.estimates,
                gt: a.gt,
                threshold_deg: a.threshold,
                out: a.out,
            }),
            Command::Sensitivity(a) => Self::Sensitivity(SensitivityPlan {
                camera: match a.camera {
                    Some(p) => CameraIntrinsics::load(&p)?,
                    None => CameraIntrinsics::default(),
                },
                radius: a.radius,
                distances: if a.distances.is_empty() { sensitivity::DEFAULT_DISTANCES.to_vec() } else { a.distances },
                inclinations: if a.inclinations.is_empty() {
                    sensitivity::DEFAULT_INCLINATIONS.to_vec()
                } else {
                    a.inclinations
                },
                pixel_noise: a.pixel_noise,
                out: a.out,
            }),
            Command::Replay(a) => {
                let m = RunManifest::load(&a.manifest)?;
                match m.command.as_str() {
                    "simulate" => Self::Simulate(SimulatePlan::from_manifest(&m, a.out)?),
                    "estimate" => Self::Estimate(EstimatePlan::from_manifest(&m, a.out, a.jobs)?),
                    "eval" => Self::Eval(EvalPlan::from_manifest(&m, a.out)?),
                    "sensitivity" => Self::Sensitivity(SensitivityPlan::from_manifest(&m, a.out)?),
                    other => return Err(CliError::Config(format!("manifest has unknown command `{other}`"))),
                }
            }
        })
    }

    fn manifest(&self) -> (RunManifest, PathBuf) {
        match self {
            Self::Simulate(p) => (p.manifest(), p.manifest_path()),
            Self::Estimate(p) => (p.manifest(), manifest_path_for(&p.out)),
            Self::Eval(p) => (p.manifest(), manifest_path_for(&p.out)),
            Self::Sensitivity(p) => (p.manifest(), manifest_path_for(&p.out)),
        }
    }

    fn run(&self) -> Result<(), CliError> {
        match self {
            Self::Simulate(p) => p.run().map(drop),
            Self::Estimate(p) => p.run().map(drop),
            Self::Eval(p) => p.run().map(drop),
            Self::Sensitivity(p) => p.run().map(drop),
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    let plan = Plan::from_command(cmd)?;
    let start = Instant::now();
    plan.run()?;
    let (mut manifest, path) = plan.manifest();
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    manifest.write(&path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute(cli.command)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("dockport: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => {
            let e = CliError::Internal("unexpected panic (see message above)".into());
            eprintln!("dockport: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
