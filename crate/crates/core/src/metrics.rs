//! Image-quality measures: PSNR and SSIM on echo magnitudes, RMSE on
//! parametric maps, and the tabulated report both are collected into.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::volume::{Dims, RealVolume};

fn check_dims(reference: &RealVolume, test: &RealVolume) -> Result<Dims> {
    if reference.dims() != test.dims() {
        return Err(Error::dim(format!(
            "reference dims {} differ from test dims {}",
            reference.dims(),
            test.dims()
        )));
    }
    Ok(reference.dims())
}

/// 10 log10(peak^2 / MSE) with peak = max(reference). Identical volumes
/// return the +infinity sentinel (written as "inf" in CSV, null in JSON).
pub fn psnr(reference: &RealVolume, test: &RealVolume) -> Result<f64> {
    check_dims(reference, test)?;
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(Error::arg(format!(
            "reference peak {peak} must be positive for PSNR"
        )));
    }
    let n = reference.dims().n() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(r, t)| (r - t) * (r - t))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean local SSIM over 2D axial (fixed-z) slices with a Gaussian window;
/// dynamic range is max(ref) - min(ref). The volume score is the mean of
/// per-slice means over all fully-inside window positions.
pub fn ssim_with(reference: &RealVolume, test: &RealVolume, params: &SsimParams) -> Result<f64> {
    let dims = check_dims(reference, test)?;
    let w = params.window;
    if w == 0 || w % 2 == 0 {
        return Err(Error::arg(format!("SSIM window {w} must be odd and positive")));
    }
    if w > dims.nx || w > dims.ny {
        return Err(Error::arg(format!(
            "SSIM window {w} exceeds slice extent {}x{}",
            dims.nx, dims.ny
        )));
    }
    if !(params.sigma > 0.0) {
        return Err(Error::arg(format!("SSIM sigma {} must be positive", params.sigma)));
    }
    let range = reference.max() - reference.min();
    if !(range > 1e-12) {
        return Err(Error::arg("reference volume has zero dynamic range"));
    }
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);

    let half = (w / 2) as isize;
    let mut weights = vec![0.0; w * w];
    let mut wsum = 0.0;
    for j in 0..w {
        for i in 0..w {
            let di = i as isize - half;
            let dj = j as isize - half;
            let g = (-((di * di + dj * dj) as f64) / (2.0 * params.sigma * params.sigma)).exp();
            weights[i + w * j] = g;
            wsum += g;
        }
    }
    for g in weights.iter_mut() {
        *g /= wsum;
    }

    let a = reference.data();
    let b = test.data();
    let plane = dims.nx * dims.ny;
    let mut slice_sum = 0.0;
    for z in 0..dims.nz {
        let base = z * plane;
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=dims.ny - w {
            for x0 in 0..=dims.nx - w {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..w {
                    let row = base + x0 + dims.nx * (y0 + j);
                    for i in 0..w {
                        let g = weights[i + w * j];
                        let va = a[row + i];
                        let vb = b[row + i];
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                acc += s;
                count += 1;
            }
        }
        slice_sum += acc / count as f64;
    }
    Ok(slice_sum / dims.nz as f64)
}

/// [`ssim_with`] at the standard 11x11 / sigma 1.5 / K1 0.01 / K2 0.03.
pub fn ssim(reference: &RealVolume, test: &RealVolume) -> Result<f64> {
    ssim_with(reference, test, &SsimParams::default())
}

/// Root-mean-square error in the volumes' native units, optionally
/// restricted to mask==1 voxels.
pub fn rmse(reference: &RealVolume, test: &RealVolume, mask: Option<&RealVolume>) -> Result<f64> {
    let dims = check_dims(reference, test)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    match mask {
        None => {
            for (r, t) in reference.data().iter().zip(test.data()) {
                sum += (r - t) * (r - t);
            }
            n = dims.n();
        }
        Some(m) => {
            if m.dims() != dims {
                return Err(Error::dim(format!(
                    "mask dims {} differ from volume dims {}",
                    m.dims(),
                    dims
                )));
            }
            for ((r, t), mv) in reference.data().iter().zip(test.data()).zip(m.data()) {
                if *mv != 0.0 {
                    sum += (r - t) * (r - t);
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::arg("RMSE mask is empty"));
            }
        }
    }
    Ok((sum / n as f64).sqrt())
}

/// One evaluated volume.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub dataset: String,
    pub fa: usize,
    pub echo: usize,
    pub accel: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub rmse: f64,
}

/// Mean/std aggregate over one acceleration group. PSNR statistics are
/// computed over the finite rows only (identical volumes report +inf);
/// a group with no finite PSNR rows reports inf mean and 0 std.
#[derive(Debug, Clone)]
pub struct MetricGroup {
    pub label: String,
    pub n: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub groups: Vec<MetricGroup>,
}

/// Population mean/std.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v}")
    }
}

fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

impl MetricReport {
    /// Build the report, grouping rows by acceleration factor.
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut by_accel: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
        for row in &rows {
            by_accel.entry(fmt_f64(row.accel)).or_default().push(row);
        }
        let groups = by_accel
            .into_iter()
            .map(|(label, members)| {
                let psnr_finite: Vec<f64> = members
                    .iter()
                    .map(|r| r.psnr_db)
                    .filter(|v| v.is_finite())
                    .collect();
                let (psnr_mean, psnr_std) = mean_std(&psnr_finite);
                let ssim: Vec<f64> = members.iter().map(|r| r.ssim).collect();
                let (ssim_mean, ssim_std) = mean_std(&ssim);
                let rmse: Vec<f64> = members.iter().map(|r| r.rmse).collect();
                let (rmse_mean, rmse_std) = mean_std(&rmse);
                MetricGroup {
                    label,
                    n: members.len(),
                    psnr_mean,
                    psnr_std,
                    ssim_mean,
                    ssim_std,
                    rmse_mean,
                    rmse_std,
                }
            })
            .collect();
        MetricReport { rows, groups }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,fa,echo,accel,psnr_db,ssim,rmse\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.dataset,
                r.fa,
                r.echo,
                fmt_f64(r.accel),
                fmt_f64(r.psnr_db),
                fmt_f64(r.ssim),
                fmt_f64(r.rmse)
            )
            .unwrap();
        }
        out.push_str("\ngroup,n,psnr_mean,psnr_std,ssim_mean,ssim_std,rmse_mean,rmse_std\n");
        for g in &self.groups {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                g.label,
                g.n,
                fmt_f64(g.psnr_mean),
                fmt_f64(g.psnr_std),
                fmt_f64(g.ssim_mean),
                fmt_f64(g.ssim_std),
                fmt_f64(g.rmse_mean),
                fmt_f64(g.rmse_std)
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "dataset": r.dataset,
                    "fa": r.fa,
                    "echo": r.echo,
                    "accel": json_f64(r.accel),
                    "psnr_db": json_f64(r.psnr_db),
                    "ssim": json_f64(r.ssim),
                    "rmse": json_f64(r.rmse),
                })
            })
            .collect();
        let groups: Vec<serde_json::Value> = self
            .groups
            .iter()
            .map(|g| {
                serde_json::json!({
                    "group": g.label,
                    "n": g.n,
                    "psnr_mean": json_f64(g.psnr_mean),
                    "psnr_std": json_f64(g.psnr_std),
                    "ssim_mean": json_f64(g.ssim_mean),
                    "ssim_std": json_f64(g.ssim_std),
                    "rmse_mean": json_f64(g.rmse_mean),
                    "rmse_std": json_f64(g.rmse_std),
                })
            })
            .collect();
        serde_json::json!({ "rows": rows, "groups": groups })
    }
}
