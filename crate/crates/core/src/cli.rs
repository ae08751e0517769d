//! Command-line surface: one subcommand per pipeline stage.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::pipeline::{
    cmd_eval, cmd_maps, cmd_mask, cmd_phantom, cmd_recon, cmd_render, cmd_train, ReconMode,
    RunConfig,
};
use crate::render::SliceAxis;

#[derive(Debug, Parser)]
#[command(
    name = "mgre",
    version,
    about = "Undersampled multi-flip-angle multi-echo GRE reconstruction pipeline"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the configured seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker pool size for per-volume reconstruction jobs
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Overwrite non-empty output directories
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconModeArg {
    Zerofill,
    Cascade,
}

impl From<ReconModeArg> for ReconMode {
    fn from(m: ReconModeArg) -> ReconMode {
        match m {
            ReconModeArg::Zerofill => ReconMode::Zerofill,
            ReconModeArg::Cascade => ReconMode::Cascade,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic phantom scans plus a train/test split
    Phantom {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Override the configured grid size
        #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
        dims: Option<Vec<usize>>,
    },
    /// Generate Poisson-disk sampling masks for the configured accelerations
    Mask {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the cascade on the split's training scans
    Train {
        /// Dataset root produced by `phantom`
        #[arg(long)]
        dataset: PathBuf,
        /// Sampling mask file
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one scan's volumes from retrospectively masked k-space
    Recon {
        #[arg(long, value_enum)]
        mode: ReconModeArg,
        /// One scan directory inside the dataset root
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Trained model (required for cascade mode)
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit parametric maps from a reconstruction (or from ground truth)
    Maps {
        /// Reconstruction directory; omitted = fit from ground-truth images
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against its scan's ground truth
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one slice (optionally an error image) as a grayscale PNG
    Render {
        /// .cvol (magnitude is rendered) or .rvol input
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        axis: SliceAxis,
        #[arg(long)]
        index: usize,
        /// Render |volume - other| * error_scale instead
        #[arg(long)]
        error_against: Option<PathBuf>,
        /// Defaults to the configured render.error_scale
        #[arg(long)]
        error_scale: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Phantom { out, dims } => {
            if let Some(d) = dims {
                cfg.phantom.dims = [d[0], d[1], d[2]];
            }
            cmd_phantom(&cfg, &out, cli.force)
        }
        Command::Mask { out } => cmd_mask(&cfg, &out, cli.force),
        Command::Train { dataset, mask, out } => {
            cmd_train(&cfg, &dataset, &mask, &out, cli.force)
        }
        Command::Recon {
            mode,
            scan,
            mask,
            model,
            out,
        } => cmd_recon(
            mode.into(),
            &scan,
            &mask,
            model.as_deref(),
            &out,
            cli.workers,
            cli.force,
        ),
        Command::Maps { recon, dataset, out } => {
            cmd_maps(&cfg, recon.as_deref(), &dataset, &out, cli.force)
        }
        Command::Eval { recon, dataset, out } => cmd_eval(&recon, &dataset, &out, cli.force),
        Command::Render {
            volume,
            axis,
            index,
            error_against,
            error_scale,
            out,
        } => cmd_render(
            &volume,
            axis,
            index,
            error_against.as_deref(),
            error_scale.unwrap_or(cfg.render.error_scale),
            &out,
        ),
    }
}
