use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l3sma::geometry::Spacing;
use l3sma::phantom::PhantomSpec;
use l3sma::sma::Sex;
use l3sma_cli::commands::{self, MeasureOpts, PreprocessOpts};
use l3sma_cli::{CliError, ConfigArgs, RunConfig};

/// Skeletal muscle area at L3: conversion, preprocessing, segmentation,
/// measurement and evaluation.
#[derive(Debug, Parser)]
#[command(name = "l3sma", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print dims, spacing, orientation and HU range of a NIfTI file or DICOM directory
    Info { path: PathBuf },
    /// Assemble a directory of DICOM slices into one NIfTI volume
    Convert { dicom_dir: PathBuf, out: PathBuf },
    /// Reorient, resample and window an image (optionally with a matching mask)
    Preprocess {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long = "mask-out", requires = "mask")]
        mask_out: Option<PathBuf>,
        /// Apply one seeded random rotation, flip and crop
        #[arg(long)]
        augment: bool,
        /// Keep clipped HU values instead of mapping the window to [0, 1]
        #[arg(long = "clip-only")]
        clip_only: bool,
    },
    /// Segment muscle on every axial slice, or only on --slice
    Segment {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        slice: Option<usize>,
    },
    /// Measure skeletal muscle area from an image and its mask
    Measure {
        image: PathBuf,
        mask: PathBuf,
        #[arg(long)]
        sex: Option<Sex>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Compare predicted masks against ground truth for every row of a manifest
    Evaluate {
        manifest: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic ring phantom: <prefix>_image.nii, <prefix>_mask.nii, <prefix>_truth.json
    Phantom {
        prefix: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [160, 128, 5])]
        dims: Vec<usize>,
        /// Voxel size in mm (one value or three)
        #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
        voxel: Vec<f64>,
        #[arg(long = "semi-axes", value_delimiter = ',', default_values_t = [60.0, 40.0])]
        semi_axes: Vec<f64>,
        #[arg(long, default_value_t = 10.0)]
        thickness: f64,
        #[arg(long = "muscle-hu", default_value_t = 50.0, allow_hyphen_values = true)]
        muscle_hu: f64,
        #[arg(long = "interior-hu", default_value_t = -100.0, allow_hyphen_values = true)]
        interior_hu: f64,
        #[arg(long = "background-hu", default_value_t = -1000.0, allow_hyphen_values = true)]
        background_hu: f64,
        #[arg(long = "annotated-slice", default_value_t = 2)]
        annotated_slice: usize,
        #[arg(long = "noise-sd", default_value_t = 0.0)]
        noise_sd: f64,
    },
    /// Print the resolved configuration in config-file format
    Config,
}

fn phantom_spec(cfg: &RunConfig, cmd: &Command) -> Result<PhantomSpec, CliError> {
    let Command::Phantom {
        dims,
        voxel,
        semi_axes,
        thickness,
        muscle_hu,
        interior_hu,
        background_hu,
        annotated_slice,
        noise_sd,
        ..
    } = cmd
    else {
        unreachable!("phantom_spec called for another command")
    };
    let (&[nx, ny, nz], &[a, b]) = (dims.as_slice(), semi_axes.as_slice()) else {
        return Err(CliError::Config(
            "--dims takes 3 values and --semi-axes takes 2".into(),
        ));
    };
    let spacing = match voxel.as_slice() {
        [s] => Spacing::uniform(*s),
        [a, b, c] => Spacing::new([*a, *b, *c]),
        _ => {
            return Err(CliError::Config(format!(
                "--voxel takes 1 or 3 values, got {}",
                voxel.len()
            )))
        }
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    let spec = PhantomSpec {
        dims: [nx, ny, nz],
        spacing,
        outer_semi_axes_mm: [a, b],
        ring_thickness_mm: *thickness,
        muscle_hu: *muscle_hu,
        interior_hu: *interior_hu,
        background_hu: *background_hu,
        annotated_slice: *annotated_slice,
        noise_sd: *noise_sd,
        seed: cfg.seed,
    };
    spec.validate_against(&cfg.seg_params.muscle_window)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.config)?;
    match &cli.command {
        Command::Info { path } => commands::info(path),
        Command::Convert { dicom_dir, out } => commands::convert(dicom_dir, out),
        Command::Preprocess {
            input,
            output,
            mask,
            mask_out,
            augment,
            clip_only,
        } => commands::preprocess(
            &cfg,
            input,
            output,
            PreprocessOpts {
                mask: mask.as_deref(),
                mask_out: mask_out.as_deref(),
                augment: *augment,
                clip_only: *clip_only,
            },
        ),
        Command::Segment {
            input,
            output,
            slice,
        } => commands::segment(&cfg, input, output, *slice),
        Command::Measure {
            image,
            mask,
            sex,
            id,
            out,
        } => commands::measure(
            &cfg,
            image,
            mask,
            MeasureOpts {
                sex: *sex,
                scan_id: id.clone(),
                out: out.as_deref(),
            },
        ),
        Command::Evaluate { manifest, out } => commands::evaluate(&cfg, manifest, out.as_deref()),
        cmd @ Command::Phantom { prefix, .. } => {
            commands::phantom(&phantom_spec(&cfg, cmd)?, prefix)
        }
        Command::Config => {
            print!("{}", cfg.to_file_text());
            Ok(())
        }
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
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e} [{}]", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
