//! Scan dataset directory layout.
//!
//! A dataset directory holds `manifest.json` plus one `.cvol` per
//! (fa, echo, coil) measured k-space volume and ground-truth image, the
//! tissue parameter `.rvol` volumes, and the sampling mask when the scan was
//! undersampled. The manifest's `files` table maps stable role names to
//! relative paths, so readers never guess file names.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_cvol, read_rvol, write_cvol, write_rvol};
use crate::phantom::{EchoKey, Protocol, ScanDataset, TissueMaps};
use crate::sampling::{read_mask, write_mask};
use crate::volume::{Dims, Domain, VoxelGeometry};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    fas_deg: Vec<f64>,
    tes_ms: Vec<f64>,
    tr_ms: f64,
    b0_t: f64,
    n_coils: usize,
    noise_sigma: f64,
    seed: u64,
    files: BTreeMap<String, String>,
}

fn role_kspace(key: EchoKey) -> String {
    format!("kspace/{}", key.label())
}
fn role_kspace_unmasked(key: EchoKey) -> String {
    format!("kspace_unmasked/{}", key.label())
}
fn role_ground_truth(key: EchoKey) -> String {
    format!("ground_truth/{}", key.label())
}

const TISSUE_ROLES: [&str; 5] = [
    "tissue/m0",
    "tissue/t1_ms",
    "tissue/t2star_ms",
    "tissue/chi_ppm",
    "tissue/phi0_rad",
];

/// Write a dataset directory. File contents are deterministic functions of
/// the dataset, so saving the same dataset twice produces identical bytes.
pub fn save_dataset(dir: impl AsRef<Path>, ds: &ScanDataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();

    for (key, vol) in &ds.kspace {
        let name = format!("kspace_{}.cvol", key.label());
        write_cvol(dir.join(&name), vol)?;
        files.insert(role_kspace(*key), name);
    }
    if let Some(full) = &ds.kspace_unmasked {
        for (key, vol) in full {
            let name = format!("kspace_full_{}.cvol", key.label());
            write_cvol(dir.join(&name), vol)?;
            files.insert(role_kspace_unmasked(*key), name);
        }
    }
    for (key, vol) in &ds.ground_truth {
        let name = format!("gt_{}.cvol", key.label());
        write_cvol(dir.join(&name), vol)?;
        files.insert(role_ground_truth(*key), name);
    }

    let tissue = &ds.tissue;
    for (role, vol) in TISSUE_ROLES.iter().zip([
        tissue.m0(),
        tissue.t1_ms(),
        tissue.t2star_ms(),
        tissue.chi_ppm(),
        tissue.phi0_rad(),
    ]) {
        let name = format!("{}.rvol", role.replace('/', "_"));
        write_rvol(dir.join(&name), vol)?;
        files.insert(role.to_string(), name);
    }

    if let Some(mask) = &ds.mask {
        let name = "sampling.mask".to_string();
        write_mask(dir.join(&name), mask)?;
        files.insert("mask".to_string(), name);
    }

    let dims = ds.dims();
    let g = tissue.geometry();
    let manifest = DatasetManifest {
        dims: dims.as_array(),
        voxel_size_mm: [g.dx_mm, g.dy_mm, g.dz_mm],
        fas_deg: ds.protocol.fas_deg.clone(),
        tes_ms: ds.protocol.tes_ms.clone(),
        tr_ms: ds.protocol.tr_ms,
        b0_t: ds.protocol.b0_t,
        n_coils: ds.protocol.n_coils,
        noise_sigma: ds.noise_sigma,
        seed: ds.seed,
        files,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

fn lookup<'m>(files: &'m BTreeMap<String, String>, role: &str, dir: &Path) -> Result<&'m String> {
    files
        .get(role)
        .ok_or_else(|| Error::MissingInput(format!("{} missing role '{}'", dir.display(), role)))
}

/// Read a dataset directory written by `save_dataset`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<ScanDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| Error::MissingInput(format!("no {} in {}", MANIFEST_NAME, dir.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;

    let dims = Dims::new(manifest.dims[0], manifest.dims[1], manifest.dims[2])?;
    let geometry = VoxelGeometry::new(
        manifest.voxel_size_mm[0],
        manifest.voxel_size_mm[1],
        manifest.voxel_size_mm[2],
    )?;
    let protocol = Protocol::new(
        manifest.fas_deg,
        manifest.tes_ms,
        manifest.tr_ms,
        manifest.b0_t,
        manifest.n_coils,
    )?;
    if !(manifest.noise_sigma >= 0.0) || !manifest.noise_sigma.is_finite() {
        return Err(Error::format(
            manifest_path.clone(),
            format!("invalid noise_sigma {}", manifest.noise_sigma),
        ));
    }
    let files = &manifest.files;

    let read_vol = |role: String, domain: Domain| -> Result<crate::volume::ComplexVolume> {
        let name = lookup(files, &role, dir)?;
        let vol = read_cvol(dir.join(name), domain)?;
        if vol.dims() != dims {
            return Err(Error::dim(format!(
                "{} has dims {}, manifest says {}",
                name,
                vol.dims(),
                dims
            )));
        }
        Ok(vol)
    };

    let mut kspace = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();
    let has_unmasked = files.keys().any(|r| r.starts_with("kspace_unmasked/"));
    let mut kspace_unmasked = if has_unmasked { Some(BTreeMap::new()) } else { None };
    for fa in 0..protocol.fas_deg.len() {
        for echo in 0..protocol.tes_ms.len() {
            for coil in 0..protocol.n_coils {
                let key = EchoKey { fa, echo, coil };
                kspace.insert(key, read_vol(role_kspace(key), Domain::Kspace)?);
                ground_truth.insert(key, read_vol(role_ground_truth(key), Domain::Image)?);
                if let Some(map) = kspace_unmasked.as_mut() {
                    map.insert(key, read_vol(role_kspace_unmasked(key), Domain::Kspace)?);
                }
            }
        }
    }

    let mut tissue_vols = Vec::new();
    for role in TISSUE_ROLES {
        let name = lookup(files, role, dir)?;
        let vol = read_rvol(dir.join(name))?;
        if vol.dims() != dims {
            return Err(Error::dim(format!(
                "{} has dims {}, manifest says {}",
                name,
                vol.dims(),
                dims
            )));
        }
        tissue_vols.push(vol);
    }
    let mut it = tissue_vols.into_iter();
    let tissue = TissueMaps::new(
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        geometry,
    )?;

    let mask = match files.get("mask") {
        Some(name) => {
            let m = read_mask(dir.join(name))?;
            if m.ny() != dims.ny || m.nz() != dims.nz {
                return Err(Error::dim(format!(
                    "mask plane {}x{} does not match dims {}",
                    m.ny(),
                    m.nz(),
                    dims
                )));
            }
            Some(m)
        }
        None => None,
    };

    Ok(ScanDataset {
        protocol,
        tissue,
        kspace,
        kspace_unmasked,
        ground_truth,
        mask,
        noise_sigma: manifest.noise_sigma,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, simulate_scan, PhantomKind};
    use crate::sampling::poisson_disk_mask;

    fn small_dataset(masked: bool) -> ScanDataset {
        let dims = Dims::new(12, 12, 8).unwrap();
        let geom = VoxelGeometry::new(0.69, 0.69, 2.0).unwrap();
        let tissue = make_phantom(PhantomKind::Ellipsoids, dims, geom, 3).unwrap();
        let protocol = Protocol::new(vec![4.0, 16.0], vec![2.1, 9.0], 34.9, 3.0, 2).unwrap();
        let mask = masked.then(|| poisson_disk_mask(12, 8, 2.0, (4, 2), 5).unwrap());
        simulate_scan(&tissue, &protocol, 0.002, 11, mask.as_ref()).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything_at_storage_precision() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(true);
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();

        assert_eq!(back.protocol, ds.protocol);
        assert_eq!(back.dims(), ds.dims());
        assert_eq!(back.seed, ds.seed);
        assert_eq!(back.noise_sigma, ds.noise_sigma);
        assert_eq!(back.mask.as_ref().unwrap().bits(), ds.mask.as_ref().unwrap().bits());

        for key in ds.keys() {
            for (a, b) in back.kspace[&key].data().iter().zip(ds.kspace[&key].data()) {
                assert!((a - b).norm() <= 1e-5 * b.norm().max(1.0));
            }
            let full_a = back.kspace_unmasked.as_ref().unwrap();
            let full_b = ds.kspace_unmasked.as_ref().unwrap();
            for (a, b) in full_a[&key].data().iter().zip(full_b[&key].data()) {
                assert!((a - b).norm() <= 1e-5 * b.norm().max(1.0));
            }
            for (a, b) in back.ground_truth[&key].data().iter().zip(ds.ground_truth[&key].data()) {
                assert!((a - b).norm() <= 1e-5 * b.norm().max(1.0));
            }
        }
        for (a, b) in back.tissue.t1_ms().data().iter().zip(ds.tissue.t1_ms().data()) {
            assert!((a - b).abs() <= 1e-3 * b.abs().max(1.0));
        }
    }

    #[test]
    fn unmasked_dataset_has_no_mask_entries() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(false);
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert!(back.mask.is_none());
        assert!(back.kspace_unmasked.is_none());
    }

    #[test]
    fn save_is_deterministic() {
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        let ds = small_dataset(true);
        save_dataset(da.path(), &ds).unwrap();
        save_dataset(db.path(), &ds).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(da.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 10);
        for name in names {
            let a = std::fs::read(da.path().join(&name)).unwrap();
            let b = std::fs::read(db.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {:?} differs between saves", name);
        }
    }

    #[test]
    fn missing_volume_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(false);
        save_dataset(dir.path(), &ds).unwrap();
        std::fs::remove_file(dir.path().join("gt_fa0_echo0_coil0.cvol")).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn unknown_manifest_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(false);
        save_dataset(dir.path(), &ds).unwrap();
        let p = dir.path().join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&p).unwrap();
        let patched = text.replacen("\"dims\"", "\"surprise\": 1,\n  \"dims\"", 1);
        std::fs::write(&p, patched).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
