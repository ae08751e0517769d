//! Poisson-disk undersampling masks over the (phase-encode, slice) plane.
//!
//! A mask lives on the (ky, kz) grid and is broadcast along the readout (x)
//! axis when applied to k-space. Generation is dart throwing in a random
//! permutation order with a background grid for neighbour lookups; the
//! minimum distance r is tuned by bisection so that the maximal pattern holds
//! at least `round(ny*nz / target_accel)` samples, then darts are accepted in
//! permutation order and capped at that budget. The achieved acceleration is
//! therefore exact up to the integer rounding of the budget, and every pair
//! of accepted darts outside the calibration rectangle keeps distance >= r.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::ComplexVolume;

pub const MASK_MAGIC: &[u8; 6] = b"MASK1\0";

/// Binary sampling pattern over (ky, kz), y fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    ny: usize,
    nz: usize,
    bits: Vec<u8>,
    target_accel: f64,
    calib: (usize, usize),
    seed: u64,
    min_distance: f64,
}

impl SamplingMask {
    /// Wrap an explicit bit plane (0/1 bytes, y fastest). Calibration extents
    /// and minimum distance are unknown for hand-built masks and read as zero.
    pub fn from_bits(
        ny: usize,
        nz: usize,
        bits: Vec<u8>,
        target_accel: f64,
        seed: u64,
    ) -> Result<Self> {
        if ny == 0 || nz == 0 {
            return Err(Error::arg("mask dims must be positive".to_string()));
        }
        if bits.len() != ny * nz {
            return Err(Error::dim(format!(
                "mask bits length {} != {}x{}",
                bits.len(),
                ny,
                nz
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::arg("mask bytes must be 0 or 1".to_string()));
        }
        if !target_accel.is_finite() || target_accel < 1.0 {
            return Err(Error::arg(format!(
                "target acceleration must be >= 1, got {}",
                target_accel
            )));
        }
        Ok(SamplingMask {
            ny,
            nz,
            bits,
            target_accel,
            calib: (0, 0),
            seed,
            min_distance: 0.0,
        })
    }

    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn target_accel(&self) -> f64 {
        self.target_accel
    }
    /// Fully-sampled centered rectangle extents (cy, cz). Zero when unknown
    /// (masks read back from disk do not carry this metadata).
    pub fn calib(&self) -> (usize, usize) {
        self.calib
    }
    /// Tuned minimum pairwise distance between accepted darts outside the
    /// calibration rectangle. Zero when unknown (masks read from disk).
    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }
    #[inline]
    pub fn bit(&self, y: usize, z: usize) -> bool {
        self.bits[y + self.ny * z] != 0
    }
    /// Raw 0/1 bytes, y fastest.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
    pub fn plane_len(&self) -> usize {
        self.ny * self.nz
    }
}

/// Bounds of the centered calibration rectangle: half-open [y0, y1) x [z0, z1).
fn calib_bounds(ny: usize, nz: usize, calib: (usize, usize)) -> (usize, usize, usize, usize) {
    let (cy, cz) = calib;
    let y0 = ny / 2 - cy / 2;
    let z0 = nz / 2 - cz / 2;
    (y0, y0 + cy, z0, z0 + cz)
}

/// Uniform background grid over the plane; cell size >= r so that any point
/// closer than r lies in one of the 3x3 neighbouring cells.
struct DartGrid {
    cell: f64,
    gny: usize,
    gnz: usize,
    cells: Vec<Vec<(f64, f64)>>,
}

impl DartGrid {
    fn new(ny: usize, nz: usize, r: f64) -> Self {
        let cell = r.max(1.0);
        let gny = (ny as f64 / cell).ceil() as usize + 1;
        let gnz = (nz as f64 / cell).ceil() as usize + 1;
        DartGrid {
            cell,
            gny,
            gnz,
            cells: vec![Vec::new(); gny * gnz],
        }
    }

    fn cell_of(&self, y: f64, z: f64) -> (usize, usize) {
        ((y / self.cell) as usize, (z / self.cell) as usize)
    }

    fn far_enough(&self, y: f64, z: f64, r2: f64) -> bool {
        let (cy, cz) = self.cell_of(y, z);
        for dz in -1i64..=1 {
            let nz = cz as i64 + dz;
            if nz < 0 || nz >= self.gnz as i64 {
                continue;
            }
            for dy in -1i64..=1 {
                let ny = cy as i64 + dy;
                if ny < 0 || ny >= self.gny as i64 {
                    continue;
                }
                for &(py, pz) in &self.cells[ny as usize + self.gny * nz as usize] {
                    let d2 = (py - y) * (py - y) + (pz - z) * (pz - z);
                    if d2 < r2 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, y: f64, z: f64) {
        let (cy, cz) = self.cell_of(y, z);
        self.cells[cy + self.gny * cz].push((y, z));
    }
}

/// Greedy maximal dart set at minimum distance `r`: walk `order`, accept every
/// point at distance >= r from all previously accepted points. Returns the
/// accepted points in acceptance order.
fn maximal_darts(points: &[(usize, usize)], order: &[usize], ny: usize, nz: usize, r: f64) -> Vec<(usize, usize)> {
    let mut grid = DartGrid::new(ny, nz, r);
    let r2 = r * r;
    let mut accepted = Vec::new();
    for &oi in order {
        let (y, z) = points[oi];
        let (fy, fz) = (y as f64, z as f64);
        if grid.far_enough(fy, fz, r2) {
            grid.insert(fy, fz);
            accepted.push((y, z));
        }
    }
    accepted
}

/// Generate a Poisson-disk mask with a forced fully-sampled calibration
/// rectangle. Deterministic for a fixed seed.
pub fn poisson_disk_mask(
    ny: usize,
    nz: usize,
    target_accel: f64,
    calib: (usize, usize),
    seed: u64,
) -> Result<SamplingMask> {
    if ny == 0 || nz == 0 {
        return Err(Error::arg("mask dims must be positive".to_string()));
    }
    if !target_accel.is_finite() || target_accel < 1.0 {
        return Err(Error::arg(format!(
            "target acceleration must be >= 1, got {}",
            target_accel
        )));
    }
    if calib.0 > ny || calib.1 > nz {
        return Err(Error::arg(format!(
            "calibration extents {}x{} exceed plane {}x{}",
            calib.0, calib.1, ny, nz
        )));
    }
    let n_total = ny * nz;
    let budget = (n_total as f64 / target_accel).round() as usize;
    if budget == 0 {
        return Err(Error::UnreachableAcceleration(format!(
            "target {}X leaves no sample budget on a {}x{} plane",
            target_accel, ny, nz
        )));
    }
    let achieved_if_exact = n_total as f64 / budget as f64;
    if (achieved_if_exact - target_accel).abs() > 0.05 * target_accel {
        return Err(Error::UnreachableAcceleration(format!(
            "plane {}x{} cannot hit {}X within 5% (closest achievable {:.3}X)",
            ny, nz, target_accel, achieved_if_exact
        )));
    }
    let n_calib = calib.0 * calib.1;
    if n_calib > budget {
        return Err(Error::UnreachableAcceleration(format!(
            "calibration rectangle {}x{} = {} samples exceeds the {}-sample budget for {}X",
            calib.0, calib.1, n_calib, budget, target_accel
        )));
    }

    let (y0, y1, z0, z1) = calib_bounds(ny, nz, calib);
    let mut bits = vec![0u8; n_total];
    for z in z0..z1 {
        for y in y0..y1 {
            bits[y + ny * z] = 1;
        }
    }

    if budget == n_total {
        // Full sampling: every location set, nothing to tune.
        bits.iter_mut().for_each(|b| *b = 1);
        return Ok(SamplingMask {
            ny,
            nz,
            bits,
            target_accel,
            calib,
            seed,
            min_distance: 1.0,
        });
    }

    // Candidate points outside the calibration rectangle, shuffled once.
    let mut points = Vec::with_capacity(n_total - n_calib);
    for z in 0..nz {
        for y in 0..ny {
            if bits[y + ny * z] == 0 {
                points.push((y, z));
            }
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // Bisect r for the largest minimum distance whose maximal pattern still
    // reaches the budget. r = 1 accepts every grid point, so lo is feasible.
    let dart_budget = budget - n_calib;
    let mut lo = 1.0f64;
    let mut hi = ((ny * ny + nz * nz) as f64).sqrt();
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let accepted = maximal_darts(&points, &order, ny, nz, mid);
        if accepted.len() >= dart_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = lo;
    let accepted = maximal_darts(&points, &order, ny, nz, r);
    debug_assert!(accepted.len() >= dart_budget);
    for &(y, z) in accepted.iter().take(dart_budget) {
        bits[y + ny * z] = 1;
    }

    Ok(SamplingMask {
        ny,
        nz,
        bits,
        target_accel,
        calib,
        seed,
        min_distance: r,
    })
}

/// Element-wise mask multiplication, broadcast along the readout axis.
pub fn apply_mask(k: &ComplexVolume, m: &SamplingMask) -> Result<ComplexVolume> {
    let dims = k.dims();
    if dims.ny != m.ny || dims.nz != m.nz {
        return Err(Error::dim(format!(
            "k-space plane {}x{} does not match mask {}x{}",
            dims.ny, dims.nz, m.ny, m.nz
        )));
    }
    let mut out = k.data().to_vec();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            if !m.bit(y, z) {
                let base = dims.idx(0, y, z);
                for v in &mut out[base..base + dims.nx] {
                    *v = num_complex::Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok(ComplexVolume::from_computed(dims, k.domain(), out))
}

/// ny*nz / popcount.
pub fn mask_acceleration(m: &SamplingMask) -> Result<f64> {
    let ones = m.popcount();
    if ones == 0 {
        return Err(Error::arg("all-zero mask has no acceleration".to_string()));
    }
    Ok(m.plane_len() as f64 / ones as f64)
}

pub fn write_mask(path: impl AsRef<Path>, m: &SamplingMask) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(m.ny as u64).to_le_bytes())?;
    w.write_all(&(m.nz as u64).to_le_bytes())?;
    w.write_all(&m.target_accel.to_le_bytes())?;
    w.write_all(&m.seed.to_le_bytes())?;
    w.write_all(&m.bits)?;
    w.flush()?;
    Ok(())
}

/// Read a mask file. Calibration extents and the tuned minimum distance are
/// not part of the format and come back as zero.
pub fn read_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    let path = path.as_ref();
    let ferr = |reason: &str| Error::format(path.to_path_buf(), reason.to_string());
    let mut r = BufReader::new(crate::io::open_for_read(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| ferr("file too short for header"))?;
    if &magic != MASK_MAGIC {
        return Err(ferr("bad magic"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| ferr("missing ny"))?;
    let ny = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8).map_err(|_| ferr("missing nz"))?;
    let nz = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8).map_err(|_| ferr("missing target_accel"))?;
    let target_accel = f64::from_le_bytes(b8);
    r.read_exact(&mut b8).map_err(|_| ferr("missing seed"))?;
    let seed = u64::from_le_bytes(b8);
    if ny == 0 || nz == 0 {
        return Err(ferr("zero mask dims"));
    }
    if !target_accel.is_finite() || target_accel < 1.0 {
        return Err(ferr("invalid target acceleration"));
    }
    let mut bits = vec![0u8; ny * nz];
    r.read_exact(&mut bits).map_err(|_| ferr("file too short for mask bits"))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(ferr("trailing bytes after mask bits"));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(ferr("mask bytes must be 0 or 1"));
    }
    Ok(SamplingMask {
        ny,
        nz,
        bits,
        target_accel,
        calib: (0, 0),
        seed,
        min_distance: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Domain};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_sampling_is_all_ones() {
        let m = poisson_disk_mask(16, 8, 1.0, (4, 4), 1).unwrap();
        assert_eq!(m.popcount(), 16 * 8);
        assert!((mask_acceleration(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_x_mask_hits_target_and_keeps_min_distance() {
        let m = poisson_disk_mask(64, 64, 3.0, (16, 12), 7).unwrap();
        let accel = mask_acceleration(&m).unwrap();
        assert!((2.85..=3.15).contains(&accel), "accel {accel}");

        // Brute-force pairwise distance among non-calibration samples.
        let (y0, y1, z0, z1) = calib_bounds(64, 64, (16, 12));
        let mut pts = Vec::new();
        for z in 0..64 {
            for y in 0..64 {
                let in_calib = (y0..y1).contains(&y) && (z0..z1).contains(&z);
                if m.bit(y, z) && !in_calib {
                    pts.push((y as f64, z as f64));
                }
            }
        }
        let r2 = m.min_distance() * m.min_distance();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d2 = (pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2);
                assert!(
                    d2 >= r2 - 1e-9,
                    "pair {:?} {:?} closer than r={}",
                    pts[i],
                    pts[j],
                    m.min_distance()
                );
            }
        }
        assert!(m.min_distance() > 1.0);
    }

    #[test]
    fn five_x_mask_hits_target() {
        let m = poisson_disk_mask(64, 64, 5.0, (16, 12), 7).unwrap();
        let accel = mask_acceleration(&m).unwrap();
        assert!((4.75..=5.25).contains(&accel), "accel {accel}");
    }

    #[test]
    fn calibration_region_fully_sampled() {
        let m = poisson_disk_mask(48, 16, 3.0, (12, 6), 3).unwrap();
        let (y0, y1, z0, z1) = calib_bounds(48, 16, (12, 6));
        for z in z0..z1 {
            for y in y0..y1 {
                assert!(m.bit(y, z), "calib hole at ({y},{z})");
            }
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let a = poisson_disk_mask(64, 64, 3.0, (16, 12), 7).unwrap();
        let b = poisson_disk_mask(64, 64, 3.0, (16, 12), 7).unwrap();
        assert_eq!(a.bits(), b.bits());
        let c = poisson_disk_mask(64, 64, 3.0, (16, 12), 8).unwrap();
        assert_ne!(a.bits(), c.bits());
    }

    #[test]
    fn popcount_monotone_in_target() {
        let mut last = usize::MAX;
        for t in [1.5, 2.0, 3.0, 4.0, 5.0] {
            let m = poisson_disk_mask(48, 32, t, (8, 6), 11).unwrap();
            let ones = m.popcount();
            assert!(ones <= last, "popcount grew at {t}X");
            last = ones;
        }
    }

    #[test]
    fn oversized_calibration_rejected() {
        let err = poisson_disk_mask(24, 16, 2.0, (24, 16), 1).unwrap_err();
        assert!(matches!(err, Error::UnreachableAcceleration(_)), "{err}");
    }

    #[test]
    fn tiny_plane_out_of_tolerance_rejected() {
        // 2x2 plane, 3X: budget rounds to 1 -> 4.0X achieved, outside 5%.
        let err = poisson_disk_mask(2, 2, 3.0, (0, 0), 1).unwrap_err();
        assert!(matches!(err, Error::UnreachableAcceleration(_)), "{err}");
    }

    #[test]
    fn apply_mask_identity_and_zeroing() {
        let dims = Dims::new(4, 6, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Complex64> = (0..dims.n())
            .map(|_| Complex64::new(rng.random(), rng.random()))
            .collect();
        let k = ComplexVolume::new(dims, Domain::Kspace, data).unwrap();

        let full = poisson_disk_mask(6, 4, 1.0, (2, 2), 1).unwrap();
        let out = apply_mask(&k, &full).unwrap();
        assert_eq!(out.data(), k.data());

        // all-zeros-except-calib: calibration alone consumes the budget
        let calib_only = poisson_disk_mask(6, 4, 4.0, (3, 2), 1).unwrap();
        assert_eq!(calib_only.popcount(), 6);
        let out = apply_mask(&k, &calib_only).unwrap();
        for z in 0..4 {
            for y in 0..6 {
                for x in 0..4 {
                    let v = out.get(x, y, z);
                    if calib_only.bit(y, z) {
                        assert_eq!(v, k.get(x, y, z));
                    } else {
                        assert_eq!(v, Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn apply_mask_matches_elementwise_oracle() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<Complex64> = (0..dims.n())
            .map(|_| Complex64::new(rng.random(), rng.random()))
            .collect();
        let k = ComplexVolume::new(dims, Domain::Kspace, data).unwrap();
        let m = poisson_disk_mask(4, 4, 2.0, (2, 2), 9).unwrap();
        let out = apply_mask(&k, &m).unwrap();
        for z in 0..4 {
            for y in 0..4 {
                let factor = if m.bit(y, z) { 1.0 } else { 0.0 };
                for x in 0..4 {
                    let expect = k.get(x, y, z) * factor;
                    assert_eq!(out.get(x, y, z), expect);
                }
            }
        }
    }

    #[test]
    fn apply_mask_dim_mismatch_rejected() {
        let k = ComplexVolume::zeros(Dims::new(4, 6, 4).unwrap(), Domain::Kspace);
        let m = poisson_disk_mask(8, 4, 2.0, (2, 2), 1).unwrap();
        assert!(apply_mask(&k, &m).is_err());
    }

    #[test]
    fn acceleration_half_mask() {
        let m = poisson_disk_mask(8, 8, 2.0, (4, 2), 2).unwrap();
        assert_eq!(m.popcount(), 32);
        assert!((mask_acceleration(&m).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.mask");
        let m = poisson_disk_mask(32, 16, 3.0, (8, 4), 13).unwrap();
        write_mask(&p, &m).unwrap();
        let back = read_mask(&p).unwrap();
        assert_eq!(back.bits(), m.bits());
        assert_eq!(back.ny(), 32);
        assert_eq!(back.nz(), 16);
        assert_eq!(back.seed(), 13);
        assert!((back.target_accel() - 3.0).abs() < 1e-12);

        // writing the read-back mask reproduces the same bytes
        let p2 = dir.path().join("v.mask");
        write_mask(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_mask_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.mask");
        let m = poisson_disk_mask(8, 8, 2.0, (2, 2), 1).unwrap();
        write_mask(&p, &m).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 7;
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_mask(&p).is_err());
    }
}
