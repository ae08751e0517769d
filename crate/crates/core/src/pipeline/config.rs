//! Run configuration: one JSON file mirrors every stage's parameters, with
//! unknown keys rejected so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::maps::{MapsParams, T2starMethod};
use crate::phantom::{PhantomKind, Protocol};
use crate::volume::{Dims, VoxelGeometry};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub fas_deg: Vec<f64>,
    pub tes_ms: Vec<f64>,
    pub tr_ms: f64,
    pub b0_t: f64,
    pub n_coils: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = Protocol::desk_default();
        ProtocolSection {
            fas_deg: p.fas_deg,
            tes_ms: p.tes_ms,
            tr_ms: p.tr_ms,
            b0_t: p.b0_t,
            n_coils: p.n_coils,
        }
    }
}

impl ProtocolSection {
    pub fn to_protocol(&self) -> Result<Protocol> {
        Protocol::new(
            self.fas_deg.clone(),
            self.tes_ms.clone(),
            self.tr_ms,
            self.b0_t,
            self.n_coils,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKindSection {
    Ellipsoids,
    Blocks,
}

impl PhantomKindSection {
    pub fn to_kind(self) -> PhantomKind {
        match self {
            PhantomKindSection::Ellipsoids => PhantomKind::Ellipsoids,
            PhantomKindSection::Blocks => PhantomKind::Blocks,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub dims: [usize; 3],
    pub voxel_mm: [f64; 3],
    pub kind: PhantomKindSection,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            dims: [48, 48, 16],
            voxel_mm: [0.69, 0.69, 2.0],
            kind: PhantomKindSection::Ellipsoids,
            n_train: 8,
            n_test: 2,
            noise_sigma: 0.0,
        }
    }
}

impl PhantomSection {
    pub fn to_dims(&self) -> Result<Dims> {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn to_geometry(&self) -> Result<VoxelGeometry> {
        VoxelGeometry::new(self.voxel_mm[0], self.voxel_mm[1], self.voxel_mm[2])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub accels: Vec<f64>,
    pub calib: [usize; 2],
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            accels: vec![3.0, 5.0],
            calib: [12, 6],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeSection {
    pub n_blocks: usize,
    pub convs_per_block: usize,
    pub features: usize,
    pub kernel: [usize; 3],
}

impl Default for CascadeSection {
    fn default() -> Self {
        let c = CascadeConfig::desk_default();
        CascadeSection {
            n_blocks: c.n_blocks,
            convs_per_block: c.convs_per_block,
            features: c.features,
            kernel: [c.kernel.0, c.kernel.1, c.kernel.2],
        }
    }
}

impl CascadeSection {
    pub fn to_cascade_config(&self) -> CascadeConfig {
        CascadeConfig {
            n_blocks: self.n_blocks,
            convs_per_block: self.convs_per_block,
            features: self.features,
            kernel: (self.kernel[0], self.kernel[1], self.kernel[2]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T2starMethodSection {
    Loglinear,
    Nlls,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapsSection {
    pub qsm_lambda: f64,
    pub mask_fraction: f64,
    pub t2star_method: T2starMethodSection,
    pub signal_floor_fraction: f64,
}

impl Default for MapsSection {
    fn default() -> Self {
        let p = MapsParams::default();
        MapsSection {
            qsm_lambda: p.qsm_lambda,
            mask_fraction: p.mask_fraction,
            t2star_method: T2starMethodSection::Nlls,
            signal_floor_fraction: p.signal_floor_fraction,
        }
    }
}

impl MapsSection {
    pub fn to_params(&self) -> MapsParams {
        MapsParams {
            qsm_lambda: self.qsm_lambda,
            mask_fraction: self.mask_fraction,
            t2star_method: match self.t2star_method {
                T2starMethodSection::Loglinear => T2starMethod::Loglinear,
                T2starMethodSection::Nlls => T2starMethod::Nlls,
            },
            signal_floor_fraction: self.signal_floor_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub error_scale: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection { error_scale: 50.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed: scan i uses seed+i, masks use seed directly.
    pub seed: u64,
    pub protocol: ProtocolSection,
    pub phantom: PhantomSection,
    pub mask: MaskSection,
    pub cascade: CascadeSection,
    pub train: TrainConfig,
    pub maps: MapsSection,
    pub render: RenderSection,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad config: {e}")))
    }
}
