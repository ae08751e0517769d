//! Pipeline stage implementations behind the CLI subcommands. Each stage
//! writes its artifact plus a stage manifest with parameters and input
//! hashes; downstream stages verify those hashes before consuming anything.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{cascade_forward, load_model, save_model, train};
use crate::dataset::{load_dataset, save_dataset, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::fourier::ifft3_centered;
use crate::io::{read_cvol, read_rvol, write_cvol, write_rvol};
use crate::maps::compute_maps;
use crate::metrics::{psnr, rmse, ssim, MetricReport, MetricRow};
use crate::phantom::{make_phantom, simulate_scan, EchoKey};
use crate::pipeline::config::RunConfig;
use crate::pipeline::provenance::{
    check_input, sha256_file, StageManifest, MAPS_MANIFEST, STAGE_MANIFEST,
};
use crate::render::{error_magnitude, extract_slice, write_png, SliceAxis};
use crate::sampling::{mask_acceleration, poisson_disk_mask, read_mask, write_mask};
use crate::volume::{rss_combine, ComplexVolume, Domain, RealVolume};

pub const SPLIT_NAME: &str = "split.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn read_split(dataset_root: &Path) -> Result<SplitFile> {
    let path = dataset_root.join(SPLIT_NAME);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::MissingInput(format!("no {} in {}", SPLIT_NAME, dataset_root.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("bad split file: {e}")))
}

/// Refuse to write into a non-empty directory unless `force`, which clears it.
fn ensure_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::arg(format!(
                    "output directory {} is not empty (use --force to overwrite)",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir)?;
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// "3" for 3.0, "3.5" for 3.5 — used in mask file names and labels.
fn accel_label(accel: f64) -> String {
    format!("{accel}")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

/// Generate the synthetic scan corpus: n_train + n_test phantom scans, each
/// simulated without a mask (undersampling happens retrospectively), plus a
/// train/test split file. Reruns with the same config are byte-identical,
/// so this stage manifest carries no wall-clock.
pub fn cmd_phantom(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<()> {
    ensure_output_dir(out_dir, force)?;
    let protocol = cfg.protocol.to_protocol()?;
    let dims = cfg.phantom.to_dims()?;
    let geometry = cfg.phantom.to_geometry()?;
    let n = cfg.phantom.n_train + cfg.phantom.n_test;
    if n == 0 {
        return Err(Error::arg("phantom stage needs n_train + n_test > 0"));
    }
    let mut names = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("scan{i:03}");
        let seed = cfg.seed.wrapping_add(i as u64);
        let tissue = make_phantom(cfg.phantom.kind.to_kind(), dims, geometry, seed)?;
        let ds = simulate_scan(&tissue, &protocol, cfg.phantom.noise_sigma, seed, None)?;
        save_dataset(out_dir.join(&name), &ds)?;
        names.push(name);
    }
    let split = SplitFile {
        train: names[..cfg.phantom.n_train].to_vec(),
        test: names[cfg.phantom.n_train..].to_vec(),
    };
    write_json(&out_dir.join(SPLIT_NAME), &split)?;
    let manifest = StageManifest::new(
        "phantom",
        serde_json::json!({
            "seed": cfg.seed,
            "protocol": cfg.protocol,
            "phantom": cfg.phantom,
        }),
    );
    manifest.write_to(out_dir.join(STAGE_MANIFEST))?;
    println!(
        "phantom: {} scans ({} train / {} test), {} k-space volumes each -> {}",
        n,
        split.train.len(),
        split.test.len(),
        protocol.n_volumes(),
        out_dir.display()
    );
    Ok(())
}

/// Generate one Poisson-disk mask per configured acceleration over the
/// dataset's (phase-encode, slice) plane.
pub fn cmd_mask(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<()> {
    let t0 = Instant::now();
    ensure_output_dir(out_dir, force)?;
    let dims = cfg.phantom.to_dims()?;
    if cfg.mask.accels.is_empty() {
        return Err(Error::arg("mask stage needs at least one acceleration"));
    }
    for &accel in &cfg.mask.accels {
        let mask = poisson_disk_mask(
            dims.ny,
            dims.nz,
            accel,
            (cfg.mask.calib[0], cfg.mask.calib[1]),
            cfg.seed,
        )?;
        let name = format!("mask_{}.mask", accel_label(accel));
        write_mask(out_dir.join(&name), &mask)?;
        println!(
            "mask: target {}x achieved {:.4}x min-distance {:.3} ({} of {} samples) -> {}",
            accel_label(accel),
            mask_acceleration(&mask)?,
            mask.min_distance(),
            mask.popcount(),
            mask.plane_len(),
            name
        );
    }
    let mut manifest = StageManifest::new(
        "mask",
        serde_json::json!({
            "seed": cfg.seed,
            "plane": [dims.ny, dims.nz],
            "accels": cfg.mask.accels,
            "calib": cfg.mask.calib,
        }),
    );
    manifest.wall_ms = Some(t0.elapsed().as_millis() as u64);
    manifest.write_to(out_dir.join(STAGE_MANIFEST))?;
    Ok(())
}

/// Train the cascade on the split's training scans, retrospectively
/// undersampled with the given mask. Writes model.cnet and train_log.csv.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset_root: &Path,
    mask_path: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<()> {
    let t0 = Instant::now();
    ensure_output_dir(out_dir, force)?;
    let split = read_split(dataset_root)?;
    if split.train.is_empty() {
        return Err(Error::arg("split has no training scans"));
    }
    let mask = read_mask(mask_path)?;
    let mut datasets = Vec::with_capacity(split.train.len());
    for name in &split.train {
        let ds = load_dataset(dataset_root.join(name))?;
        datasets.push(ds.with_mask(&mask)?);
    }
    let cascade_cfg = cfg.cascade.to_cascade_config();
    let (model, log) = train(&datasets, cascade_cfg, &cfg.train)?;
    save_model(out_dir.join("model.cnet"), &model)?;

    let mut csv = String::from("step,loss,wall_ms\n");
    for entry in &log {
        csv.push_str(&format!("{},{},{}\n", entry.step, entry.loss, entry.wall_ms));
    }
    std::fs::write(out_dir.join("train_log.csv"), csv)?;

    let mut manifest = StageManifest::new(
        "train",
        serde_json::json!({
            "cascade": cfg.cascade,
            "train": cfg.train,
            "mask_target_accel": mask.target_accel(),
            "n_train_scans": split.train.len(),
        }),
    );
    manifest.add_input("mask", mask_path)?;
    manifest.add_input("split", dataset_root.join(SPLIT_NAME))?;
    for name in &split.train {
        manifest.add_input(
            format!("dataset/{name}"),
            dataset_root.join(name).join(MANIFEST_NAME),
        )?;
    }
    manifest.wall_ms = Some(t0.elapsed().as_millis() as u64);
    manifest.write_to(out_dir.join(STAGE_MANIFEST))?;
    let final_loss = log.last().map(|e| e.loss).unwrap_or(f64::NAN);
    println!(
        "train: {} steps over {} scans, final loss {:.6e}, {:.1}s -> {}",
        log.len(),
        split.train.len(),
        final_loss,
        t0.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    Zerofill,
    Cascade,
}

impl ReconMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconMode::Zerofill => "zerofill",
            ReconMode::Cascade => "cascade",
        }
    }
}

/// Reconstruct one scan: retrospectively undersample its k-space with the
/// mask, then run zero-filled or cascade reconstruction per (fa, echo, coil)
/// over a worker pool. Worker count never affects output bytes.
pub fn cmd_recon(
    mode: ReconMode,
    scan_dir: &Path,
    mask_path: &Path,
    model_path: Option<&Path>,
    out_dir: &Path,
    workers: usize,
    force: bool,
) -> Result<()> {
    let t0 = Instant::now();
    if workers == 0 {
        return Err(Error::arg("workers must be at least 1"));
    }
    ensure_output_dir(out_dir, force)?;
    let ds = load_dataset(scan_dir)?;
    let mask = read_mask(mask_path)?;
    let masked = ds.with_mask(&mask)?;
    let model = match (mode, model_path) {
        (ReconMode::Cascade, Some(p)) => Some(load_model(p)?),
        (ReconMode::Cascade, None) => {
            return Err(Error::arg("cascade reconstruction needs --model"));
        }
        (ReconMode::Zerofill, _) => None,
    };

    let keys: Vec<EchoKey> = masked.keys().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::arg(format!("worker pool: {e}")))?;
    let recons: Result<Vec<(EchoKey, ComplexVolume)>> = pool.install(|| {
        keys.par_iter()
            .map(|&key| {
                let k = &masked.kspace[&key];
                let img = match &model {
                    None => ifft3_centered(k)?,
                    Some(m) => cascade_forward(m, k, &mask)?,
                };
                Ok((key, img))
            })
            .collect()
    });
    for (key, vol) in recons? {
        write_cvol(out_dir.join(format!("recon_{}.cvol", key.label())), &vol)?;
    }

    let mut manifest = StageManifest::new(
        "recon",
        serde_json::json!({
            "mode": mode.as_str(),
            "accel": mask.target_accel(),
            "workers": workers,
        }),
    );
    manifest.add_input("dataset_manifest", scan_dir.join(MANIFEST_NAME))?;
    manifest.add_input("mask", mask_path)?;
    if let Some(p) = model_path {
        if mode == ReconMode::Cascade {
            manifest.add_input("model", p)?;
        }
    }
    manifest.wall_ms = Some(t0.elapsed().as_millis() as u64);
    manifest.write_to(out_dir.join(STAGE_MANIFEST))?;
    println!(
        "recon: {} volumes via {} at {}x in {:.1}s -> {}",
        keys.len(),
        mode.as_str(),
        accel_label(mask.target_accel()),
        t0.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

fn load_recon_volumes(
    recon_dir: &Path,
    keys: impl Iterator<Item = EchoKey>,
) -> Result<BTreeMap<EchoKey, ComplexVolume>> {
    let mut out = BTreeMap::new();
    for key in keys {
        let path = recon_dir.join(format!("recon_{}.cvol", key.label()));
        out.insert(key, read_cvol(&path, Domain::Image)?);
    }
    Ok(out)
}

/// RSS-combine coils per (fa, echo).
fn combined_magnitudes(
    volumes: &BTreeMap<EchoKey, ComplexVolume>,
    n_fas: usize,
    n_echoes: usize,
    n_coils: usize,
) -> Result<Vec<Vec<RealVolume>>> {
    (0..n_fas)
        .map(|fa| {
            (0..n_echoes)
                .map(|echo| {
                    let coils: Vec<ComplexVolume> = (0..n_coils)
                        .map(|coil| {
                            volumes
                                .get(&EchoKey { fa, echo, coil })
                                .cloned()
                                .ok_or_else(|| {
                                    Error::MissingInput(format!(
                                        "volume fa{fa}_echo{echo}_coil{coil}"
                                    ))
                                })
                        })
                        .collect::<Result<_>>()?;
                    rss_combine(&coils)
                })
                .collect()
        })
        .collect()
}

/// Derive the parametric maps from a reconstruction (or, with `recon_dir`
/// None, from the scan's ground-truth images). Writes one .rvol per map and
/// a maps manifest recording lambda, thresholds, and TEs.
pub fn cmd_maps(
    cfg: &RunConfig,
    recon_dir: Option<&Path>,
    dataset_dir: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<()> {
    let t0 = Instant::now();
    ensure_output_dir(out_dir, force)?;
    let ds = load_dataset(dataset_dir)?;
    let protocol = &ds.protocol;
    let (volumes, source) = match recon_dir {
        Some(rd) => {
            let recon_manifest = StageManifest::read_from(rd.join(STAGE_MANIFEST))?;
            check_input(&recon_manifest, "dataset_manifest", dataset_dir.join(MANIFEST_NAME))?;
            (load_recon_volumes(rd, ds.keys())?, "recon")
        }
        None => (ds.ground_truth.clone(), "ground_truth"),
    };
    let mags = combined_magnitudes(
        &volumes,
        protocol.fas_deg.len(),
        protocol.tes_ms.len(),
        protocol.n_coils,
    )?;
    // phase train: FA2 echoes of the reference coil (coil 0); RSS would
    // cancel the phase
    let fa2 = protocol.fas_deg.len() - 1;
    let phase: Vec<ComplexVolume> = (0..protocol.tes_ms.len())
        .map(|echo| {
            volumes
                .get(&EchoKey { fa: fa2, echo, coil: 0 })
                .cloned()
                .ok_or_else(|| Error::MissingInput(format!("phase volume echo {echo}")))
        })
        .collect::<Result<_>>()?;
    let maps = compute_maps(
        &mags,
        &phase,
        &protocol.tes_ms,
        ds.tissue.geometry(),
        protocol.b0_t,
        &cfg.maps.to_params(),
    )?;
    for (name, vol) in [
        ("pdw.rvol", &maps.pdw),
        ("t1w.rvol", &maps.t1w),
        ("t2star_ms.rvol", &maps.t2star_ms),
        ("fieldmap_hz.rvol", &maps.fieldmap_hz),
        ("chi_ppm.rvol", &maps.chi_ppm),
        ("brain_mask.rvol", &maps.brain_mask),
    ] {
        write_rvol(out_dir.join(name), vol)?;
    }
    let mut manifest = StageManifest::new(
        "maps",
        serde_json::json!({
            "maps": cfg.maps,
            "tes_ms": protocol.tes_ms,
            "b0_t": protocol.b0_t,
            "source": source,
        }),
    );
    manifest.add_input("dataset_manifest", dataset_dir.join(MANIFEST_NAME))?;
    if let Some(rd) = recon_dir {
        manifest.add_input("recon_manifest", rd.join(STAGE_MANIFEST))?;
    }
    manifest.wall_ms = Some(t0.elapsed().as_millis() as u64);
    manifest.write_to(out_dir.join(MAPS_MANIFEST))?;
    println!(
        "maps: 6 maps from {} in {:.1}s -> {}",
        source,
        t0.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

/// Evaluate a reconstruction against its scan's ground truth: PSNR/SSIM/RMSE
/// of the RSS magnitudes per (fa, echo). Refuses reconstructions whose
/// recorded dataset hash does not match the given dataset.
pub fn cmd_eval(recon_dir: &Path, dataset_dir: &Path, out_dir: &Path, force: bool) -> Result<()> {
    let t0 = Instant::now();
    ensure_output_dir(out_dir, force)?;
    let ds = load_dataset(dataset_dir)?;
    let recon_manifest = StageManifest::read_from(recon_dir.join(STAGE_MANIFEST))?;
    if recon_manifest.stage != "recon" {
        return Err(Error::Provenance(format!(
            "{} is a '{}' stage output, expected 'recon'",
            recon_dir.display(),
            recon_manifest.stage
        )));
    }
    check_input(&recon_manifest, "dataset_manifest", dataset_dir.join(MANIFEST_NAME))?;
    let accel = recon_manifest.parameters["accel"].as_f64().ok_or_else(|| {
        Error::format(recon_dir.join(STAGE_MANIFEST), "recon manifest lacks accel")
    })?;
    let dataset_id = dataset_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dataset_dir.display().to_string());

    let protocol = &ds.protocol;
    let recon_volumes = load_recon_volumes(recon_dir, ds.keys())?;
    let gt_mags = combined_magnitudes(
        &ds.ground_truth,
        protocol.fas_deg.len(),
        protocol.tes_ms.len(),
        protocol.n_coils,
    )?;
    let recon_mags = combined_magnitudes(
        &recon_volumes,
        protocol.fas_deg.len(),
        protocol.tes_ms.len(),
        protocol.n_coils,
    )?;
    let mut rows = Vec::new();
    for fa in 0..protocol.fas_deg.len() {
        for echo in 0..protocol.tes_ms.len() {
            let reference = &gt_mags[fa][echo];
            let test = &recon_mags[fa][echo];
            rows.push(MetricRow {
                dataset: dataset_id.clone(),
                fa,
                echo,
                accel,
                psnr_db: psnr(reference, test)?,
                ssim: ssim(reference, test)?,
                rmse: rmse(reference, test, None)?,
            });
        }
    }
    let report = MetricReport::from_rows(rows);
    std::fs::write(out_dir.join("metrics.csv"), report.to_csv())?;
    let mut json = serde_json::to_string_pretty(&report.to_json())?;
    json.push('\n');
    std::fs::write(out_dir.join("metrics.json"), json)?;

    let mut manifest = StageManifest::new("eval", serde_json::json!({ "accel": accel }));
    manifest.add_input("dataset_manifest", dataset_dir.join(MANIFEST_NAME))?;
    manifest.add_input("recon_manifest", recon_dir.join(STAGE_MANIFEST))?;
    manifest.wall_ms = Some(t0.elapsed().as_millis() as u64);
    manifest.write_to(out_dir.join(STAGE_MANIFEST))?;
    for g in &report.groups {
        println!(
            "eval {} at {}x: PSNR {:.2} ({:.2}) dB, SSIM {:.4} ({:.4}), RMSE {:.4e} over {} volumes",
            dataset_id, g.label, g.psnr_mean, g.psnr_std, g.ssim_mean, g.ssim_std, g.rmse_mean, g.n
        );
    }
    Ok(())
}

fn load_render_volume(path: &Path) -> Result<RealVolume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("cvol") => Ok(read_cvol(path, Domain::Image)?.magnitude()),
        Some("rvol") => read_rvol(path),
        _ => Err(Error::arg(format!(
            "{} is neither .cvol nor .rvol",
            path.display()
        ))),
    }
}

/// Render one slice as a grayscale PNG (magnitude for complex volumes).
/// With `error_against`, renders |a - b| * error_scale instead.
pub fn cmd_render(
    volume_path: &Path,
    axis: SliceAxis,
    index: usize,
    error_against: Option<&Path>,
    error_scale: f64,
    out_png: &Path,
) -> Result<()> {
    let a = load_render_volume(volume_path)?;
    let vol = match error_against {
        Some(other) => error_magnitude(&a, &load_render_volume(other)?, error_scale)?,
        None => a,
    };
    let slice = extract_slice(&vol, axis, index)?;
    write_png(out_png, &slice)?;
    println!(
        "render: {}x{} slice -> {}",
        slice.width,
        slice.height,
        out_png.display()
    );
    Ok(())
}

/// Input-hash verification helper shared by tests and the FFI layer: the
/// sha256 of a file, exposed at the pipeline level.
pub fn input_hash(path: &Path) -> Result<String> {
    sha256_file(path)
}
