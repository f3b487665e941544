//! `conncrack` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "conncrack", version, about = "Pixel-level pavement crack detection", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate spatial resolution across the vertical field of view.
    Geometry(GeometryArgs),
    /// Write the 8 connectivity maps of a mask as images plus a binary dump.
    EncodeMaps(EncodeMapsArgs),
    /// Generate synthetic images, masks and a split manifest.
    Synth(SynthArgs),
    /// Train a generator and critic on manifest patches.
    Train(TrainArgs),
    /// Detect cracks in one image with a trained generator.
    Detect(DetectArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Check every reverse pass against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GeometryArgs {
    /// Camera height above the road, in meters.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub height_m: f64,
    /// Angle between the bottom edge of the field of view and the vertical, in degrees.
    #[arg(long, allow_negative_numbers = true, default_value_t = 10.25)]
    pub alpha_deg: f64,
    /// Vertical field of view, in degrees.
    #[arg(long, allow_negative_numbers = true, default_value_t = 69.5)]
    pub fov_deg: f64,
    /// Vertical image resolution in pixels.
    #[arg(long, default_value_t = 1080)]
    pub vpix: u32,
    /// Comma-separated fractions of the field of view, ascending.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,0.25,0.5,0.75,1")]
    pub fractions: Vec<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeMapsArgs {
    /// Crack mask image (PGM/PPM/PNG); any nonzero pixel is crack.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// JSON generator spec; omitted fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_parser = parse_triple, default_value = "0.7,0.15,0.15")]
    pub split: [f64; 3],
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// JSON with optional `model`, `train`, `patch_stride` and `keep` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_manifest: PathBuf,
    /// Overrides `train.iterations`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Generator checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Model config; defaults to `model_config.json` beside the checkpoint.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub patch: usize,
    #[arg(long, default_value_t = 0)]
    pub overlap: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 200)]
    pub min_area: usize,
    /// Require links to agree in both directions.
    #[arg(long)]
    pub reciprocal: bool,
    /// Output mask (PNG/PGM); a `.json` sidecar is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Match tolerance in pixels.
    #[arg(long, default_value_t = 5.0)]
    pub tol: f64,
    /// Region grid as COLSxROWS, e.g. 16x9; written beside the report.
    #[arg(long)]
    pub grid: Option<String>,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `gradcheck.csv` and `run_meta.json` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    values.try_into().map_err(|v: Vec<f64>| format!("expected 3 comma-separated values, got {}", v.len()))
}

/// Runtime failure, as opposed to a usage error.
pub enum Failure {
    Error(anyhow::Error),
    /// The command ran but its check did not pass.
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Geometry(a) => commands::geometry(a),
        Command::EncodeMaps(a) => commands::encode_maps(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Detect(a) => commands::detect(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
    }
}
