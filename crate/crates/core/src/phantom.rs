//! Synthetic multi-flip-angle multi-echo GRE scans.
//!
//! Piecewise-constant tissue phantoms drive a spoiled-GRE steady-state signal
//! model; susceptibility maps induce an off-resonance field through the unit
//! dipole kernel; smooth coil maps and complex Gaussian k-space noise finish
//! the forward model. Everything is deterministic per seed, with per-volume
//! RNG streams so parallel and serial simulation produce identical bytes.

use std::collections::BTreeMap;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourier::{fft3_centered, ifft3_centered};
use crate::sampling::{apply_mask, SamplingMask};
use crate::volume::{ComplexVolume, Dims, Domain, RealVolume, VoxelGeometry};

/// Gyromagnetic ratio over 2π in MHz/T; with χ in ppm the MHz·ppm product
/// lands directly in Hz.
pub const GAMMA_BAR_MHZ_PER_T: f64 = 42.576;

/// Per-region tissue constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueParams {
    pub m0: f64,
    pub t1_ms: f64,
    pub t2star_ms: f64,
    pub chi_ppm: f64,
    pub phi0_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    /// Half-open box [min, max).
    Block { min: [usize; 3], max: [usize; 3] },
}

impl Shape {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        match self {
            Shape::Ellipsoid { center, radii } => {
                let dx = (x as f64 - center[0]) / radii[0];
                let dy = (y as f64 - center[1]) / radii[1];
                let dz = (z as f64 - center[2]) / radii[2];
                dx * dx + dy * dy + dz * dz <= 1.0
            }
            Shape::Block { min, max } => {
                (min[0]..max[0]).contains(&x)
                    && (min[1]..max[1]).contains(&y)
                    && (min[2]..max[2]).contains(&z)
            }
        }
    }
}

/// One painted region. Regions after the first are clipped to the first
/// (base) region when a phantom is rasterized.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub shape: Shape,
    pub params: TissueParams,
}

/// Voxel-wise tissue parameter volumes.
#[derive(Debug, Clone)]
pub struct TissueMaps {
    m0: RealVolume,
    t1_ms: RealVolume,
    t2star_ms: RealVolume,
    chi_ppm: RealVolume,
    phi0_rad: RealVolume,
    geometry: VoxelGeometry,
    regions: Option<Vec<Region>>,
}

impl TissueMaps {
    pub fn new(
        m0: RealVolume,
        t1_ms: RealVolume,
        t2star_ms: RealVolume,
        chi_ppm: RealVolume,
        phi0_rad: RealVolume,
        geometry: VoxelGeometry,
    ) -> Result<Self> {
        let dims = m0.dims();
        for (name, v) in [
            ("T1", &t1_ms),
            ("T2*", &t2star_ms),
            ("chi", &chi_ppm),
            ("phi0", &phi0_rad),
        ] {
            if v.dims() != dims {
                return Err(Error::dim(format!(
                    "{} dims {} do not match M0 dims {}",
                    name,
                    v.dims(),
                    dims
                )));
            }
        }
        for i in 0..dims.n() {
            if m0.data()[i] > 0.0 && (t1_ms.data()[i] <= 0.0 || t2star_ms.data()[i] <= 0.0) {
                return Err(Error::arg(format!(
                    "non-positive relaxation time at voxel {} with M0 > 0",
                    i
                )));
            }
        }
        Ok(TissueMaps {
            m0,
            t1_ms,
            t2star_ms,
            chi_ppm,
            phi0_rad,
            geometry,
            regions: None,
        })
    }

    pub fn dims(&self) -> Dims {
        self.m0.dims()
    }
    pub fn geometry(&self) -> VoxelGeometry {
        self.geometry
    }
    pub fn m0(&self) -> &RealVolume {
        &self.m0
    }
    pub fn t1_ms(&self) -> &RealVolume {
        &self.t1_ms
    }
    pub fn t2star_ms(&self) -> &RealVolume {
        &self.t2star_ms
    }
    pub fn chi_ppm(&self) -> &RealVolume {
        &self.chi_ppm
    }
    pub fn phi0_rad(&self) -> &RealVolume {
        &self.phi0_rad
    }
    /// Region descriptors when the maps came from `make_phantom`.
    pub fn regions(&self) -> Option<&[Region]> {
        self.regions.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Ellipsoids,
    Blocks,
}

impl FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoids" => Ok(PhantomKind::Ellipsoids),
            "blocks" => Ok(PhantomKind::Blocks),
            other => Err(Error::arg(format!(
                "unknown phantom kind '{}' (use 'ellipsoids' or 'blocks')",
                other
            ))),
        }
    }
}

impl std::fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhantomKind::Ellipsoids => "ellipsoids",
            PhantomKind::Blocks => "blocks",
        })
    }
}

const BASE_PARAMS: TissueParams = TissueParams {
    m0: 0.8,
    t1_ms: 900.0,
    t2star_ms: 60.0,
    chi_ppm: 0.0,
    phi0_rad: 0.0,
};

// Background keeps positive relaxation times so the signal model stays finite
// even though M0 = 0 makes the signal vanish there.
const BACKGROUND_PARAMS: TissueParams = TissueParams {
    m0: 0.0,
    t1_ms: 1000.0,
    t2star_ms: 50.0,
    chi_ppm: 0.0,
    phi0_rad: 0.0,
};

fn draw_params(rng: &mut ChaCha8Rng) -> TissueParams {
    TissueParams {
        m0: rng.random_range(0.4..1.0),
        t1_ms: rng.random_range(300.0..2000.0),
        t2star_ms: rng.random_range(10.0..100.0),
        chi_ppm: rng.random_range(-0.2..0.2),
        phi0_rad: rng.random_range(-0.5..0.5),
    }
}

/// Build a piecewise-constant tissue phantom: one base region carrying
/// default tissue, six random interior regions overwriting it in order, and
/// zero-proton background elsewhere. Deterministic per seed.
pub fn make_phantom(
    kind: PhantomKind,
    dims: Dims,
    geometry: VoxelGeometry,
    seed: u64,
) -> Result<TissueMaps> {
    if dims.nx < 8 || dims.ny < 8 || dims.nz < 8 {
        return Err(Error::arg(format!(
            "phantom dims must be at least 8 per axis, got {}",
            dims
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny, nz) = (dims.nx as f64, dims.ny as f64, dims.nz as f64);

    let base_shape = match kind {
        PhantomKind::Ellipsoids => Shape::Ellipsoid {
            center: [nx / 2.0, ny / 2.0, nz / 2.0],
            radii: [nx * 0.42, ny * 0.42, nz * 0.42],
        },
        PhantomKind::Blocks => Shape::Block {
            min: [dims.nx / 8, dims.ny / 8, dims.nz / 8],
            max: [
                dims.nx - dims.nx / 8,
                dims.ny - dims.ny / 8,
                dims.nz - dims.nz / 8,
            ],
        },
    };
    let mut regions = vec![Region {
        shape: base_shape,
        params: BASE_PARAMS,
    }];

    for _ in 0..6 {
        let shape = match kind {
            PhantomKind::Ellipsoids => {
                let center = [
                    rng.random_range(nx * 0.25..nx * 0.75),
                    rng.random_range(ny * 0.25..ny * 0.75),
                    rng.random_range(nz * 0.25..nz * 0.75),
                ];
                let radii = [
                    rng.random_range(3.0..9.0),
                    rng.random_range(3.0..9.0),
                    rng.random_range(2.0..5.0),
                ];
                Shape::Ellipsoid { center, radii }
            }
            PhantomKind::Blocks => {
                let mut min = [0usize; 3];
                let mut max = [0usize; 3];
                for (a, n) in [dims.nx, dims.ny, dims.nz].into_iter().enumerate() {
                    let lo = rng.random_range(n / 4..=n / 2);
                    let len = rng.random_range((n / 6).max(1)..=n / 3);
                    min[a] = lo;
                    max[a] = (lo + len.max(1)).min(n);
                }
                Shape::Block { min, max }
            }
        };
        regions.push(Region {
            shape,
            params: draw_params(&mut rng),
        });
    }

    // Rasterize by painting in order; inner regions clipped to the base.
    let n = dims.n();
    let mut m0 = vec![BACKGROUND_PARAMS.m0; n];
    let mut t1 = vec![BACKGROUND_PARAMS.t1_ms; n];
    let mut t2s = vec![BACKGROUND_PARAMS.t2star_ms; n];
    let mut chi = vec![BACKGROUND_PARAMS.chi_ppm; n];
    let mut phi0 = vec![BACKGROUND_PARAMS.phi0_rad; n];
    for (ri, region) in regions.iter().enumerate() {
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    if !region.shape.contains(x, y, z) {
                        continue;
                    }
                    if ri > 0 && !regions[0].shape.contains(x, y, z) {
                        continue;
                    }
                    let i = dims.idx(x, y, z);
                    m0[i] = region.params.m0;
                    t1[i] = region.params.t1_ms;
                    t2s[i] = region.params.t2star_ms;
                    chi[i] = region.params.chi_ppm;
                    phi0[i] = region.params.phi0_rad;
                }
            }
        }
    }

    let mut maps = TissueMaps::new(
        RealVolume::from_computed(dims, m0),
        RealVolume::from_computed(dims, t1),
        RealVolume::from_computed(dims, t2s),
        RealVolume::from_computed(dims, chi),
        RealVolume::from_computed(dims, phi0),
        geometry,
    )?;
    maps.regions = Some(regions);
    Ok(maps)
}

/// Acquisition protocol.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Protocol {
    pub fas_deg: Vec<f64>,
    pub tes_ms: Vec<f64>,
    pub tr_ms: f64,
    pub b0_t: f64,
    pub n_coils: usize,
}

impl Protocol {
    pub fn new(
        fas_deg: Vec<f64>,
        tes_ms: Vec<f64>,
        tr_ms: f64,
        b0_t: f64,
        n_coils: usize,
    ) -> Result<Self> {
        let p = Protocol {
            fas_deg,
            tes_ms,
            tr_ms,
            b0_t,
            n_coils,
        };
        p.validate()?;
        Ok(p)
    }

    /// Two flip angles 4/16 deg, seven echoes spanning 2.1-20.8 ms,
    /// TR 34.9 ms, 3 T, four coils.
    pub fn desk_default() -> Self {
        let n_echo = 7;
        let (te0, te1) = (2.1, 20.8);
        let tes = (0..n_echo)
            .map(|i| te0 + (te1 - te0) * i as f64 / (n_echo - 1) as f64)
            .collect();
        Protocol::new(vec![4.0, 16.0], tes, 34.9, 3.0, 4).expect("default protocol is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.fas_deg.is_empty() || self.tes_ms.is_empty() {
            return Err(Error::arg("protocol needs at least one FA and TE".to_string()));
        }
        for &fa in &self.fas_deg {
            if !(fa > 0.0 && fa < 90.0) {
                return Err(Error::arg(format!("flip angle {} deg outside (0, 90)", fa)));
            }
        }
        for w in self.tes_ms.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::arg("echo times must be strictly increasing".to_string()));
            }
        }
        let te_max = *self.tes_ms.last().unwrap();
        if !(self.tr_ms > te_max) {
            return Err(Error::arg(format!(
                "TR {} ms must exceed the last TE {} ms",
                self.tr_ms, te_max
            )));
        }
        if !(self.tes_ms[0] > 0.0) {
            return Err(Error::arg("echo times must be positive".to_string()));
        }
        if !(self.b0_t > 0.0) || !self.b0_t.is_finite() {
            return Err(Error::arg(format!("field strength {} T must be positive", self.b0_t)));
        }
        if self.n_coils == 0 {
            return Err(Error::arg("need at least one coil".to_string()));
        }
        Ok(())
    }

    pub fn n_volumes(&self) -> usize {
        self.fas_deg.len() * self.tes_ms.len() * self.n_coils
    }
}

/// Index of one stored echo volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EchoKey {
    pub fa: usize,
    pub echo: usize,
    pub coil: usize,
}

impl EchoKey {
    /// Stable per-volume RNG stream id.
    pub fn stream(&self) -> u64 {
        ((self.fa as u64 * 1000) + self.echo as u64) * 1000 + self.coil as u64
    }

    pub fn label(&self) -> String {
        format!("fa{}_echo{}_coil{}", self.fa, self.echo, self.coil)
    }
}

/// One simulated acquisition: measured k-space per (fa, echo, coil), the
/// noiseless ground-truth images, the tissue that generated them, and the
/// sampling mask when undersampled. `kspace_unmasked` keeps the pre-mask
/// noisy k-space so both routes stay available.
#[derive(Debug, Clone)]
pub struct ScanDataset {
    pub protocol: Protocol,
    pub tissue: TissueMaps,
    pub kspace: BTreeMap<EchoKey, ComplexVolume>,
    pub kspace_unmasked: Option<BTreeMap<EchoKey, ComplexVolume>>,
    pub ground_truth: BTreeMap<EchoKey, ComplexVolume>,
    pub mask: Option<SamplingMask>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScanDataset {
    pub fn dims(&self) -> Dims {
        self.tissue.dims()
    }

    pub fn keys(&self) -> impl Iterator<Item = EchoKey> + '_ {
        self.kspace.keys().copied()
    }

    /// Retrospectively undersample: apply `mask` to the (unmasked) k-space,
    /// keeping the full k-space alongside.
    pub fn with_mask(&self, mask: &SamplingMask) -> Result<ScanDataset> {
        let dims = self.dims();
        if mask.ny() != dims.ny || mask.nz() != dims.nz {
            return Err(Error::dim(format!(
                "mask plane {}x{} does not match dims {}",
                mask.ny(),
                mask.nz(),
                dims
            )));
        }
        let full = self.kspace_unmasked.as_ref().unwrap_or(&self.kspace);
        let mut masked = BTreeMap::new();
        for (key, vol) in full {
            masked.insert(*key, apply_mask(vol, mask)?);
        }
        Ok(ScanDataset {
            protocol: self.protocol.clone(),
            tissue: self.tissue.clone(),
            kspace: masked,
            kspace_unmasked: Some(full.clone()),
            ground_truth: self.ground_truth.clone(),
            mask: Some(mask.clone()),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        })
    }
}

fn deg_to_rad(d: f64) -> f64 {
    d * std::f64::consts::PI / 180.0
}

fn spgr_value(
    m0: f64,
    t1_ms: f64,
    t2star_ms: f64,
    phi0_rad: f64,
    delta_f_hz: f64,
    fa_rad: f64,
    tr_ms: f64,
    te_ms: f64,
) -> Complex64 {
    let e1 = (-tr_ms / t1_ms).exp();
    let mag = m0 * fa_rad.sin() * (1.0 - e1) / (1.0 - fa_rad.cos() * e1) * (-te_ms / t2star_ms).exp();
    let phase = phi0_rad + 2.0 * std::f64::consts::PI * delta_f_hz * (te_ms * 1e-3);
    Complex64::from_polar(mag, phase)
}

/// Spoiled-GRE steady-state signal for one voxel.
pub fn spgr_signal(
    m0: f64,
    t1_ms: f64,
    t2star_ms: f64,
    phi0_rad: f64,
    delta_f_hz: f64,
    fa_deg: f64,
    tr_ms: f64,
    te_ms: f64,
) -> Result<Complex64> {
    if t1_ms <= 0.0 || t2star_ms <= 0.0 {
        return Err(Error::arg(format!(
            "relaxation times must be positive (T1 = {} ms, T2* = {} ms)",
            t1_ms, t2star_ms
        )));
    }
    for (name, v) in [
        ("M0", m0),
        ("phi0", phi0_rad),
        ("delta_f", delta_f_hz),
        ("FA", fa_deg),
        ("TR", tr_ms),
        ("TE", te_ms),
    ] {
        if !v.is_finite() {
            return Err(Error::arg(format!("{} must be finite", name)));
        }
    }
    Ok(spgr_value(
        m0,
        t1_ms,
        t2star_ms,
        phi0_rad,
        delta_f_hz,
        deg_to_rad(fa_deg),
        tr_ms,
        te_ms,
    ))
}

/// Smooth complex coil maps: Gaussian magnitude lobes centred at equispaced
/// angles around the (y, z) plane with linear phase ramps, constant along x.
/// A single coil is identically one.
pub fn coil_sensitivities(n_coils: usize, dims: Dims) -> Result<Vec<ComplexVolume>> {
    if n_coils == 0 {
        return Err(Error::arg("need at least one coil".to_string()));
    }
    if n_coils == 1 {
        let ones = vec![Complex64::new(1.0, 0.0); dims.n()];
        return Ok(vec![ComplexVolume::from_computed(dims, Domain::Image, ones)]);
    }
    let (ny, nz) = (dims.ny as f64, dims.nz as f64);
    let sigma = 0.7 * ny.max(nz);
    let mut maps = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let theta = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
        let cy = ny / 2.0 + 0.6 * ny * theta.cos();
        let cz = nz / 2.0 + 0.6 * nz * theta.sin();
        let mut data = vec![Complex64::new(0.0, 0.0); dims.n()];
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                let dy = y as f64 - cy;
                let dz = z as f64 - cz;
                let mag = (-(dy * dy + dz * dz) / (2.0 * sigma * sigma)).exp();
                let phase = 2.0
                    * std::f64::consts::PI
                    * (0.01 * (c + 1) as f64 * y as f64 / ny
                        + 0.013 * (c + 1) as f64 * z as f64 / nz);
                let v = Complex64::from_polar(mag, phase);
                let base = dims.idx(0, y, z);
                for x in 0..dims.nx {
                    data[base + x] = v;
                }
            }
        }
        maps.push(ComplexVolume::from_computed(dims, Domain::Image, data));
    }
    Ok(maps)
}

/// Unit dipole kernel D(k) = 1/3 - kz^2/|k|^2 on the centered grid with
/// physical k coordinates from the voxel size; D(0) = 0. Flat vec, x fastest.
pub fn dipole_kernel(dims: Dims, geometry: VoxelGeometry) -> Vec<f64> {
    let mut d = vec![0.0; dims.n()];
    let freq = |i: usize, n: usize, step_mm: f64| (i as f64 - (n / 2) as f64) / (n as f64 * step_mm);
    for z in 0..dims.nz {
        let kz = freq(z, dims.nz, geometry.dz_mm);
        for y in 0..dims.ny {
            let ky = freq(y, dims.ny, geometry.dy_mm);
            for x in 0..dims.nx {
                let kx = freq(x, dims.nx, geometry.dx_mm);
                let k2 = kx * kx + ky * ky + kz * kz;
                d[dims.idx(x, y, z)] = if k2 == 0.0 { 0.0 } else { 1.0 / 3.0 - kz * kz / k2 };
            }
        }
    }
    d
}

/// Off-resonance field in Hz induced by a susceptibility map (ppm) at field
/// strength `b0_t`, via the k-space dipole model.
pub fn field_from_susceptibility(
    chi_ppm: &RealVolume,
    geometry: VoxelGeometry,
    b0_t: f64,
) -> Result<RealVolume> {
    if !(b0_t > 0.0) || !b0_t.is_finite() {
        return Err(Error::arg(format!("field strength {} T must be positive", b0_t)));
    }
    let dims = chi_ppm.dims();
    let d = dipole_kernel(dims, geometry);
    let k = fft3_centered(&chi_ppm.to_complex(Domain::Image))?;
    let mut kd = k.data().to_vec();
    for (v, di) in kd.iter_mut().zip(&d) {
        *v *= *di;
    }
    let field = ifft3_centered(&ComplexVolume::from_computed(dims, Domain::Kspace, kd))?;
    let scale = GAMMA_BAR_MHZ_PER_T * b0_t;
    let out = field.data().iter().map(|v| scale * v.re).collect();
    Ok(RealVolume::from_computed(dims, out))
}

/// Simulate one full scan. For every (FA, TE, coil): image = coil map times
/// the voxel-wise SPGR signal (with the dipole field from chi); k-space is
/// its centered FFT plus complex Gaussian noise (std `noise_sigma` per
/// component, per-volume RNG stream); the mask, when given, is applied on top
/// with the unmasked copy retained.
pub fn simulate_scan(
    tissue: &TissueMaps,
    protocol: &Protocol,
    noise_sigma: f64,
    seed: u64,
    mask: Option<&SamplingMask>,
) -> Result<ScanDataset> {
    protocol.validate()?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::arg(format!("noise sigma {} must be >= 0", noise_sigma)));
    }
    let dims = tissue.dims();
    if let Some(m) = mask {
        if m.ny() != dims.ny || m.nz() != dims.nz {
            return Err(Error::dim(format!(
                "mask plane {}x{} does not match volume {}",
                m.ny(),
                m.nz(),
                dims
            )));
        }
    }

    let delta_f = field_from_susceptibility(tissue.chi_ppm(), tissue.geometry(), protocol.b0_t)?;
    let coils = coil_sensitivities(protocol.n_coils, dims)?;

    let fa_echo_pairs: Vec<(usize, usize)> = (0..protocol.fas_deg.len())
        .flat_map(|f| (0..protocol.tes_ms.len()).map(move |e| (f, e)))
        .collect();

    let per_pair: Vec<Vec<(EchoKey, ComplexVolume, ComplexVolume, Option<ComplexVolume>)>> =
        fa_echo_pairs
            .par_iter()
            .map(|&(fa_i, echo_i)| {
                let fa_rad = deg_to_rad(protocol.fas_deg[fa_i]);
                let te = protocol.tes_ms[echo_i];
                let mut base = vec![Complex64::new(0.0, 0.0); dims.n()];
                for i in 0..dims.n() {
                    let m0 = tissue.m0().data()[i];
                    if m0 == 0.0 {
                        continue; // no protons, no signal
                    }
                    base[i] = spgr_value(
                        m0,
                        tissue.t1_ms().data()[i],
                        tissue.t2star_ms().data()[i],
                        tissue.phi0_rad().data()[i],
                        delta_f.data()[i],
                        fa_rad,
                        protocol.tr_ms,
                        te,
                    );
                }
                let mut out = Vec::with_capacity(protocol.n_coils);
                for (coil_i, coil) in coils.iter().enumerate() {
                    let key = EchoKey {
                        fa: fa_i,
                        echo: echo_i,
                        coil: coil_i,
                    };
                    let img_data: Vec<Complex64> = base
                        .iter()
                        .zip(coil.data())
                        .map(|(s, c)| s * c)
                        .collect();
                    let image = ComplexVolume::from_computed(dims, Domain::Image, img_data);
                    let mut k = fft3_centered(&image).expect("image-domain input");
                    if noise_sigma > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(key.stream());
                        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
                        let kd = k.data_mut();
                        for v in kd.iter_mut() {
                            let re: f64 = normal.sample(&mut rng);
                            let im: f64 = normal.sample(&mut rng);
                            *v += Complex64::new(re, im);
                        }
                    }
                    let (measured, unmasked) = match mask {
                        Some(m) => {
                            let masked = apply_mask(&k, m).expect("dims checked above");
                            (masked, Some(k))
                        }
                        None => (k, None),
                    };
                    out.push((key, measured, image, unmasked));
                }
                out
            })
            .collect();

    let mut kspace = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();
    let mut kspace_unmasked = mask.map(|_| BTreeMap::new());
    for group in per_pair {
        for (key, measured, image, unmasked) in group {
            kspace.insert(key, measured);
            ground_truth.insert(key, image);
            if let (Some(map), Some(full)) = (kspace_unmasked.as_mut(), unmasked) {
                map.insert(key, full);
            }
        }
    }

    Ok(ScanDataset {
        protocol: protocol.clone(),
        tissue: tissue.clone(),
        kspace,
        kspace_unmasked,
        ground_truth,
        mask: mask.cloned(),
        noise_sigma,
        seed,
    })
}
