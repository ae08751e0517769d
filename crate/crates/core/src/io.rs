//! Binary volume file formats.
//!
//! `.cvol`: magic `CVOL1\0`, little-endian u32 ndim (= 3), ndim little-endian
//! u64 dims ordered (nx, ny, nz), then nx·ny·nz little-endian f32 (real, imag)
//! pairs, x fastest. `.rvol` is the same layout with a single f32 per voxel
//! and magic `RVOL1\0`. Values are stored at f32 precision regardless of the
//! in-memory representation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, Domain, RealVolume};

pub const CVOL_MAGIC: &[u8; 6] = b"CVOL1\0";
pub const RVOL_MAGIC: &[u8; 6] = b"RVOL1\0";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::format(path.to_path_buf(), reason.into())
}

pub(crate) fn open_for_read(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::MissingInput(format!("{}: {}", path.display(), e)))
}

fn write_header(w: &mut impl Write, magic: &[u8; 6], dims: Dims) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&3u32.to_le_bytes())?;
    for d in dims.as_array() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read, magic: &[u8; 6], path: &Path) -> Result<Dims> {
    let mut got = [0u8; 6];
    r.read_exact(&mut got)
        .map_err(|_| format_err(path, "file too short for header"))?;
    if &got != magic {
        return Err(format_err(
            path,
            format!("bad magic {:?}, expected {:?}", got, magic),
        ));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| format_err(path, "file too short for ndim"))?;
    let ndim = u32::from_le_bytes(b4);
    if ndim != 3 {
        return Err(format_err(path, format!("ndim {} != 3", ndim)));
    }
    let mut ds = [0usize; 3];
    for d in ds.iter_mut() {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)
            .map_err(|_| format_err(path, "file too short for dims"))?;
        let v = u64::from_le_bytes(b8);
        *d = usize::try_from(v).map_err(|_| format_err(path, format!("dim {} too large", v)))?;
    }
    Dims::new(ds[0], ds[1], ds[2]).map_err(|e| format_err(path, e.to_string()))
}

fn read_f32(r: &mut impl Read, path: &Path) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| format_err(path, "file too short for voxel data"))?;
    Ok(f32::from_le_bytes(b))
}

fn expect_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(format_err(path, "trailing bytes after voxel data")),
        Err(e) => Err(Error::Io(e)),
    }
}

/// Write a complex volume. The image/k-space domain tag is not stored; the
/// reader supplies it.
pub fn write_cvol(path: impl AsRef<Path>, vol: &ComplexVolume) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, CVOL_MAGIC, vol.dims())?;
    for v in vol.data() {
        w.write_all(&(v.re as f32).to_le_bytes())?;
        w.write_all(&(v.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cvol(path: impl AsRef<Path>, domain: Domain) -> Result<ComplexVolume> {
    let path = path.as_ref();
    let mut r = BufReader::new(open_for_read(path)?);
    let dims = read_header(&mut r, CVOL_MAGIC, path)?;
    let mut data = Vec::with_capacity(dims.n());
    for _ in 0..dims.n() {
        let re = read_f32(&mut r, path)?;
        let im = read_f32(&mut r, path)?;
        data.push(Complex64::new(re as f64, im as f64));
    }
    expect_eof(&mut r, path)?;
    ComplexVolume::new(dims, domain, data)
        .map_err(|e| format_err(path, format!("invalid voxel data: {}", e)))
}

pub fn write_rvol(path: impl AsRef<Path>, vol: &RealVolume) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, RVOL_MAGIC, vol.dims())?;
    for v in vol.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rvol(path: impl AsRef<Path>) -> Result<RealVolume> {
    let path = path.as_ref();
    let mut r = BufReader::new(open_for_read(path)?);
    let dims = read_header(&mut r, RVOL_MAGIC, path)?;
    let mut data = Vec::with_capacity(dims.n());
    for _ in 0..dims.n() {
        data.push(read_f32(&mut r, path)? as f64);
    }
    expect_eof(&mut r, path)?;
    RealVolume::new(dims, data).map_err(|e| format_err(path, format!("invalid voxel data: {}", e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cvol_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.cvol");
        let dims = Dims::new(5, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<Complex64> = (0..dims.n())
            .map(|_| Complex64::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let vol = ComplexVolume::new(dims, Domain::Kspace, data).unwrap();
        write_cvol(&p, &vol).unwrap();
        let back = read_cvol(&p, Domain::Kspace).unwrap();
        assert_eq!(back.dims(), dims);
        assert_eq!(back.domain(), Domain::Kspace);
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert!((a - b).norm() <= 1e-5 * b.norm().max(1.0));
        }
    }

    #[test]
    fn cvol_written_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(3, 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let data: Vec<Complex64> = (0..dims.n())
            .map(|_| Complex64::new(rng.random(), rng.random()))
            .collect();
        let vol = ComplexVolume::new(dims, Domain::Image, data).unwrap();
        let p1 = dir.path().join("a.cvol");
        let p2 = dir.path().join("b.cvol");
        write_cvol(&p1, &vol).unwrap();
        write_cvol(&p2, &vol).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rvol_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rvol");
        let dims = Dims::new(4, 2, 2).unwrap();
        let data: Vec<f64> = (0..dims.n()).map(|i| i as f64 * 0.25).collect();
        let vol = RealVolume::new(dims, data).unwrap();
        write_rvol(&p, &vol).unwrap();
        let back = read_rvol(&p).unwrap();
        assert_eq!(back.dims(), dims);
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cvol");
        std::fs::write(&p, b"NOTAVOLUME").unwrap();
        let err = read_cvol(&p, Domain::Image).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.cvol");
        let dims = Dims::new(2, 2, 2).unwrap();
        let vol = ComplexVolume::zeros(dims, Domain::Image);
        write_cvol(&p, &vol).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_cvol(&p, Domain::Image).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.rvol");
        let vol = RealVolume::zeros(Dims::new(2, 2, 1).unwrap());
        write_rvol(&p, &vol).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.push(0);
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_rvol(&p).is_err());
    }

    #[test]
    fn wrong_ndim_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.rvol");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(RVOL_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        let err = read_rvol(&p).unwrap_err();
        assert!(err.to_string().contains("ndim"), "{err}");
    }
}
