//! `vcgeo`: one binary for the whole pipeline. Generate procedural room
//! scenes, regroup them by view overlap, train the denoising transformer,
//! run one-step geometry inference, score predictions, and compare
//! conditioning variants.

mod commands;
mod common;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "vcgeo", version, about = "Video-consistent geometry estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of procedural room sequences.
    GenData(commands::gen::GenArgs),
    /// Regroup sequences into overlap-consistent view groups.
    Group(commands::group::GroupArgs),
    /// Train the denoising transformer on a dataset.
    Train(commands::train::TrainArgs),
    /// Predict geometry for stored sequences from their images alone.
    Infer(commands::infer::InferArgs),
    /// Score a checkpoint against ground-truth geometry.
    Eval(commands::eval::EvalArgs),
    /// Train conditioning and target variants under one budget and compare.
    Ablate(commands::ablate::AblateArgs),
    /// Measure image-to-geometry attention alignment per layer.
    ProbeAttn(commands::probe::ProbeArgs),
    /// Export point clouds (PLY) and image previews (PPM).
    Export(commands::export::ExportArgs),
    /// Run the full pipeline at toy scale as a smoke test.
    Selfcheck(commands::selfcheck::SelfcheckArgs),
}

/// Failures split into "the request was invalid" (exit 2, matching clap's
/// own usage errors) and "the work itself failed" (exit 1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(err) => write!(f, "{err:#}"),
        }
    }
}

macro_rules! impl_runtime_from {
    ($($ty:ty),* $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.into())
            }
        }
    )*};
}

impl_runtime_from!(
    anyhow::Error,
    std::io::Error,
    vcgeo_core::dataio::DataIoError,
    vcgeo_core::diffusion::DiffusionError,
    vcgeo_core::eval::EvalError,
    vcgeo_core::geometry::GeometryError,
    vcgeo_core::model::ModelError,
    vcgeo_core::scenegen::SceneGenError,
    vcgeo_core::train::TrainError,
);

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::GenData(args) => commands::gen::run(args),
        Command::Group(args) => commands::group::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Infer(args) => commands::infer::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
        Command::ProbeAttn(args) => commands::probe::run(args),
        Command::Export(args) => commands::export::run(args),
        Command::Selfcheck(args) => commands::selfcheck::run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
