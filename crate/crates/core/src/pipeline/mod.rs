//! End-to-end pipeline stages, run configuration, and provenance tracking.

pub mod commands;
pub mod config;
pub mod provenance;

pub use commands::{
    cmd_eval, cmd_maps, cmd_mask, cmd_phantom, cmd_recon, cmd_render, cmd_train, read_split,
    ReconMode, SplitFile, SPLIT_NAME,
};
pub use config::RunConfig;
pub use provenance::{check_input, sha256_file, StageManifest, MAPS_MANIFEST, STAGE_MANIFEST};
