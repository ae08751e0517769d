//! Complex and real 3D volumes with fixed memory layout.
//!
//! All volumes are stored as flat vectors with the readout (x) index fastest:
//! `index = x + nx * (y + ny * z)`. This matches the on-disk `.cvol`/`.rvol`
//! layout, so file i/o is a straight copy.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Volume dimensions (readout, phase-encode, slice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::arg(format!(
                "volume dimensions must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        Ok(Dims { nx, ny, nz })
    }

    /// Total voxel count.
    pub fn n(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline(always)]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Which side of the Fourier transform a complex volume lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    Image,
    Kspace,
}

/// Voxel edge lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VoxelGeometry {
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub dz_mm: f64,
}

impl VoxelGeometry {
    pub fn new(dx_mm: f64, dy_mm: f64, dz_mm: f64) -> Result<Self> {
        if !(dx_mm > 0.0 && dy_mm > 0.0 && dz_mm > 0.0) {
            return Err(Error::arg(format!(
                "voxel size must be strictly positive, got ({dx_mm}, {dy_mm}, {dz_mm})"
            )));
        }
        Ok(VoxelGeometry { dx_mm, dy_mm, dz_mm })
    }

    pub fn isotropic(d_mm: f64) -> Result<Self> {
        Self::new(d_mm, d_mm, d_mm)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx_mm, self.dy_mm, self.dz_mm]
    }
}

/// Immutable complex-valued 3D volume, image- or k-space-domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    dims: Dims,
    domain: Domain,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    /// Build a volume from raw samples, validating length and finiteness.
    pub fn new(dims: Dims, domain: Domain, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dims.n() {
            return Err(Error::dim(format!(
                "data length {} does not match dims {} ({} voxels)",
                data.len(),
                dims,
                dims.n()
            )));
        }
        if let Some(i) = data.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite(format!("complex volume sample at index {i}")));
        }
        Ok(ComplexVolume { dims, domain, data })
    }

    /// Internal constructor for data produced by already-validated arithmetic.
    pub(crate) fn from_computed(dims: Dims, domain: Domain, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), dims.n());
        ComplexVolume { dims, domain, data }
    }

    pub fn zeros(dims: Dims, domain: Domain) -> Self {
        ComplexVolume {
            dims,
            domain,
            data: vec![Complex64::new(0.0, 0.0); dims.n()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.dims.idx(x, y, z)]
    }

    /// Per-voxel magnitude as a real volume.
    pub fn magnitude(&self) -> RealVolume {
        RealVolume::from_computed(self.dims, self.data.iter().map(|c| c.norm()).collect())
    }

    /// Per-voxel phase (radians) as a real volume.
    pub fn phase(&self) -> RealVolume {
        RealVolume::from_computed(self.dims, self.data.iter().map(|c| c.arg()).collect())
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Relabel the domain without touching the samples. Used by code that
    /// builds k-space or image data by direct arithmetic.
    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }
}

/// Extract a contiguous readout (x) slab, preserving (y, z) extents.
pub fn crop_readout(vol: &ComplexVolume, start: usize, length: usize) -> Result<ComplexVolume> {
    let d = vol.dims();
    if length == 0 {
        return Err(Error::arg("crop length must be positive".to_string()));
    }
    if start + length > d.nx {
        return Err(Error::arg(format!(
            "crop [{start}, {}) out of range for nx={}",
            start + length,
            d.nx
        )));
    }
    let out_dims = Dims::new(length, d.ny, d.nz)?;
    let mut out = Vec::with_capacity(out_dims.n());
    for z in 0..d.nz {
        for y in 0..d.ny {
            let row = d.idx(0, y, z);
            out.extend_from_slice(&vol.data()[row + start..row + start + length]);
        }
    }
    Ok(ComplexVolume::from_computed(out_dims, vol.domain(), out))
}

/// Root-sum-of-squares combination of coil images into a real magnitude volume.
pub fn rss_combine(coils: &[ComplexVolume]) -> Result<RealVolume> {
    let first = coils
        .first()
        .ok_or_else(|| Error::arg("rss_combine needs at least one coil volume".to_string()))?;
    let dims = first.dims();
    for (i, c) in coils.iter().enumerate() {
        if c.dims() != dims {
            return Err(Error::dim(format!(
                "coil {i} has dims {} but coil 0 has {}",
                c.dims(),
                dims
            )));
        }
    }
    let mut acc = vec![0.0f64; dims.n()];
    for c in coils {
        for (a, v) in acc.iter_mut().zip(c.data()) {
            *a += v.norm_sqr();
        }
    }
    for a in acc.iter_mut() {
        *a = a.sqrt();
    }
    Ok(RealVolume::from_computed(dims, acc))
}

/// Real-valued 3D volume (parametric maps, magnitudes, masks).
#[derive(Debug, Clone, PartialEq)]
pub struct RealVolume {
    dims: Dims,
    data: Vec<f64>,
}

impl RealVolume {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.n() {
            return Err(Error::dim(format!(
                "data length {} does not match dims {}",
                data.len(),
                dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("real volume sample at index {i}")));
        }
        Ok(RealVolume { dims, data })
    }

    pub(crate) fn from_computed(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.n());
        RealVolume { dims, data }
    }

    pub fn zeros(dims: Dims) -> Self {
        RealVolume {
            dims,
            data: vec![0.0; dims.n()],
        }
    }

    pub fn constant(dims: Dims, v: f64) -> Self {
        RealVolume {
            dims,
            data: vec![v; dims.n()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline(always)]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.idx(x, y, z)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Promote to a complex volume with zero imaginary part.
    pub fn to_complex(&self, domain: Domain) -> ComplexVolume {
        ComplexVolume::from_computed(
            self.dims,
            domain,
            self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_volume(nx: usize, ny: usize, nz: usize) -> ComplexVolume {
        let dims = Dims::new(nx, ny, nz).unwrap();
        let data = (0..dims.n())
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        ComplexVolume::new(dims, Domain::Image, data).unwrap()
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Dims::new(0, 4, 4).is_err());
        assert!(Dims::new(4, 0, 4).is_err());
        assert!(Dims::new(4, 4, 0).is_err());
    }

    #[test]
    fn rejects_length_mismatch_and_nonfinite() {
        let dims = Dims::new(2, 2, 2).unwrap();
        assert!(ComplexVolume::new(dims, Domain::Image, vec![Complex64::new(0.0, 0.0); 7]).is_err());
        let mut data = vec![Complex64::new(0.0, 0.0); 8];
        data[3] = Complex64::new(f64::NAN, 0.0);
        assert!(ComplexVolume::new(dims, Domain::Image, data).is_err());
    }

    #[test]
    fn crop_full_is_identity() {
        let v = seq_volume(4, 3, 2);
        let c = crop_readout(&v, 0, 4).unwrap();
        assert_eq!(c.data(), v.data());
        assert_eq!(c.dims(), v.dims());
    }

    #[test]
    fn crop_selects_x_lines() {
        // x-lines are [0,1,2,3] in each (y,z) row
        let v = seq_volume(4, 2, 2);
        let c = crop_readout(&v, 1, 2).unwrap();
        assert_eq!(c.dims().as_array(), [2, 2, 2]);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(c.get(x, y, z), v.get(x + 1, y, z));
                }
            }
        }
    }

    #[test]
    fn crop_out_of_range_rejected() {
        let v = seq_volume(4, 2, 2);
        assert!(crop_readout(&v, 3, 2).is_err());
        assert!(crop_readout(&v, 0, 5).is_err());
        assert!(crop_readout(&v, 0, 0).is_err());
    }

    #[test]
    fn rss_single_coil_is_magnitude() {
        let v = seq_volume(3, 2, 2);
        let r = rss_combine(std::slice::from_ref(&v)).unwrap();
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn rss_two_identical_coils_scales_by_sqrt2() {
        let v = seq_volume(3, 2, 2);
        let r = rss_combine(&[v.clone(), v.clone()]).unwrap();
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - 2f64.sqrt() * b.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn rss_pythagorean_voxel() {
        let dims = Dims::new(1, 1, 1).unwrap();
        let a = ComplexVolume::new(dims, Domain::Image, vec![Complex64::new(3.0, 0.0)]).unwrap();
        let b = ComplexVolume::new(dims, Domain::Image, vec![Complex64::new(0.0, 4.0)]).unwrap();
        let r = rss_combine(&[a, b]).unwrap();
        assert!((r.data()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rss_dim_mismatch_rejected() {
        let a = seq_volume(3, 2, 2);
        let b = seq_volume(2, 2, 2);
        assert!(rss_combine(&[a, b]).is_err());
        assert!(rss_combine(&[]).is_err());
    }

    #[test]
    fn rss_nonnegative_property() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let dims = Dims::new(
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..6),
            )
            .unwrap();
            let coils: Vec<ComplexVolume> = (0..rng.random_range(1..4))
                .map(|_| {
                    let data = (0..dims.n())
                        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect();
                    ComplexVolume::new(dims, Domain::Image, data).unwrap()
                })
                .collect();
            let r = rss_combine(&coils).unwrap();
            assert!(r.data().iter().all(|&v| v >= 0.0));
        }
    }
}
