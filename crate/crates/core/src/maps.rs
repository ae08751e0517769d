//! Parametric maps from reconstructed echoes: composite PDW/T1W, T2*
//! relaxometry, field mapping, and QSM dipole inversion.
//!
//! The T2* fit (log-linear / Gauss-Newton), the magnitude-weighted phase
//! regression, and the Tikhonov-gradient CG inversion stand in for the
//! cited MDI, SEED, and streaking-regularized methods, which are not
//! publicly described.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourier::{fft3_centered, ifft3_centered};
use crate::phantom::{dipole_kernel, GAMMA_BAR_MHZ_PER_T};
use crate::volume::{ComplexVolume, Dims, Domain, RealVolume, VoxelGeometry};

pub const DEFAULT_QSM_LAMBDA: f64 = 1e-3;
pub const DEFAULT_MASK_FRACTION: f64 = 0.1;
pub const T2STAR_MIN_MS: f64 = 0.1;
pub const T2STAR_MAX_MS: f64 = 500.0;

/// Which flip-angle echo train a composite averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaGroup {
    /// Low flip angle — proton-density weighting.
    Fa1,
    /// High flip angle — T1 weighting.
    Fa2,
}

impl FaGroup {
    pub fn index(self) -> usize {
        match self {
            FaGroup::Fa1 => 0,
            FaGroup::Fa2 => 1,
        }
    }
}

/// Voxel-wise mean of the selected flip angle's echo magnitudes.
/// `echoes_by_fa[fa][echo]` holds magnitude volumes; FA1 yields the PDW
/// composite, FA2 the T1W composite.
pub fn composite_average(echoes_by_fa: &[Vec<RealVolume>], group: FaGroup) -> Result<RealVolume> {
    let fa = group.index();
    let echoes = echoes_by_fa
        .get(fa)
        .ok_or_else(|| Error::arg(format!("no echo group for flip angle index {fa}")))?;
    if echoes.is_empty() {
        return Err(Error::arg(format!("flip angle group {fa} has no echoes")));
    }
    let dims = echoes[0].dims();
    for e in echoes.iter() {
        if e.dims() != dims {
            return Err(Error::dim(format!(
                "echo dims {} differ from {}",
                e.dims(),
                dims
            )));
        }
    }
    let scale = 1.0 / echoes.len() as f64;
    let mut acc = vec![0.0; dims.n()];
    for e in echoes {
        for (a, v) in acc.iter_mut().zip(e.data()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a *= scale;
    }
    Ok(RealVolume::from_computed(dims, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum T2starMethod {
    Loglinear,
    Nlls,
}

pub const FLAG_OK: u8 = 0;
/// Max echo magnitude fell below the signal floor; T2* forced to 0.
pub const FLAG_LOW_SIGNAL: u8 = 1;
/// Fitted decay rate was <= 0; T2* clamped to the upper bound.
pub const FLAG_NON_DECAYING: u8 = 2;

#[derive(Debug, Clone)]
pub struct T2starFit {
    pub t2star_ms: RealVolume,
    pub m0: RealVolume,
    /// Per-voxel fit status, same layout as the volumes.
    pub flags: Vec<u8>,
}

fn check_tes(tes_ms: &[f64], n_echoes: usize) -> Result<()> {
    if n_echoes < 2 {
        return Err(Error::arg(format!("need at least 2 echoes, got {n_echoes}")));
    }
    if tes_ms.len() != n_echoes {
        return Err(Error::arg(format!(
            "{} TEs for {} echoes",
            tes_ms.len(),
            n_echoes
        )));
    }
    if !tes_ms.windows(2).all(|w| w[1] > w[0]) || !tes_ms.iter().all(|t| t.is_finite()) {
        return Err(Error::arg(format!("TEs must be strictly increasing, got {tes_ms:?}")));
    }
    Ok(())
}

fn check_same_dims<'a, I: Iterator<Item = Dims>>(mut dims_iter: I) -> Result<Dims>
where
    I: 'a,
{
    let first = dims_iter.next().ok_or_else(|| Error::arg("no volumes given"))?;
    for d in dims_iter {
        if d != first {
            return Err(Error::dim(format!("volume dims {} differ from {}", d, first)));
        }
    }
    Ok(first)
}

/// Weighted least-squares line y = a + b x; returns (a, b) or None when the
/// system is degenerate (fewer than two effective points).
fn weighted_line(points: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, w) in points {
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    if sw <= 0.0 {
        return None;
    }
    let denom = sw * sxx - sx * sx;
    if !(denom > 0.0) || !denom.is_finite() {
        return None;
    }
    let b = (sw * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / sw;
    Some((a, b))
}

fn decay_objective(m0: f64, r2_per_ms: f64, tes_ms: &[f64], signal: &[f64]) -> f64 {
    tes_ms
        .iter()
        .zip(signal)
        .map(|(&t, &s)| {
            let r = m0 * (-r2_per_ms * t).exp() - s;
            r * r
        })
        .sum()
}

/// Gauss-Newton refinement of (M0, R2*) with step halving; never accepts a
/// step that worsens the objective, so the result is no worse than the start.
fn gauss_newton_decay(m0_0: f64, r2_0: f64, tes_ms: &[f64], signal: &[f64]) -> (f64, f64) {
    const MAX_ITERS: usize = 25;
    const MAX_HALVINGS: usize = 12;
    let clamp = |m0: f64, r2: f64| (m0.clamp(0.0, 1e12), r2.clamp(-1.0, 1.0 / T2STAR_MIN_MS));
    let (mut m0, mut r2) = clamp(m0_0, r2_0);
    let mut obj = decay_objective(m0, r2, tes_ms, signal);
    for _ in 0..MAX_ITERS {
        // J^T J and J^T r for residuals r_i = m0 e^{-r2 t_i} - s_i
        let (mut j11, mut j12, mut j22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &s) in tes_ms.iter().zip(signal) {
            let e = (-r2 * t).exp();
            let r = m0 * e - s;
            let d1 = e;
            let d2 = -m0 * t * e;
            j11 += d1 * d1;
            j12 += d1 * d2;
            j22 += d2 * d2;
            g1 += d1 * r;
            g2 += d2 * r;
        }
        let det = j11 * j22 - j12 * j12;
        if !(det.abs() > 1e-300) || !det.is_finite() {
            break;
        }
        let dm0 = (-g1 * j22 + g2 * j12) / det;
        let dr2 = (-j11 * g2 + j12 * g1) / det;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let (m0_try, r2_try) = clamp(m0 + alpha * dm0, r2 + alpha * dr2);
            let obj_try = decay_objective(m0_try, r2_try, tes_ms, signal);
            if obj_try <= obj && obj_try.is_finite() {
                let gain = obj - obj_try;
                m0 = m0_try;
                r2 = r2_try;
                obj = obj_try;
                accepted = true;
                if gain <= 1e-14 * obj.max(1.0) {
                    return (m0, r2);
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (m0, r2)
}

fn fit_t2star_voxel(
    signal: &[f64],
    tes_ms: &[f64],
    method: T2starMethod,
    signal_floor: f64,
) -> (f64, f64, u8) {
    let peak = signal.iter().copied().fold(0.0_f64, f64::max);
    if peak < signal_floor {
        return (0.0, 0.0, FLAG_LOW_SIGNAL);
    }
    // log-linear start: weighted by |S|^2 so the noisy tail counts less
    let points: Vec<(f64, f64, f64)> = tes_ms
        .iter()
        .zip(signal)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&t, &s)| (t, s.ln(), s * s))
        .collect();
    if points.len() < 2 {
        return (0.0, 0.0, FLAG_LOW_SIGNAL);
    }
    let Some((intercept, slope)) = weighted_line(&points) else {
        return (0.0, 0.0, FLAG_LOW_SIGNAL);
    };
    let mut m0 = intercept.min(700.0).exp();
    let mut r2 = -slope; // 1/ms
    if method == T2starMethod::Nlls {
        let (m, r) = gauss_newton_decay(m0, r2, tes_ms, signal);
        m0 = m;
        r2 = r;
    }
    if r2 <= 0.0 {
        return (T2STAR_MAX_MS, m0, FLAG_NON_DECAYING);
    }
    ((1.0 / r2).clamp(T2STAR_MIN_MS, T2STAR_MAX_MS), m0, FLAG_OK)
}

/// Per-voxel T2* fit over an echo train of magnitude volumes.
///
/// `loglinear` does a |S|^2-weighted least-squares line on ln|S| vs TE;
/// `nlls` refines that start with Gauss-Newton on the exponential model.
/// Voxels whose peak magnitude is below `signal_floor` are flagged and get
/// T2* = 0; fitted T2* is clamped to [0.1, 500] ms.
pub fn fit_t2star(
    echoes: &[RealVolume],
    tes_ms: &[f64],
    method: T2starMethod,
    signal_floor: f64,
) -> Result<T2starFit> {
    check_tes(tes_ms, echoes.len())?;
    if !(signal_floor >= 0.0) || !signal_floor.is_finite() {
        return Err(Error::arg(format!("signal floor {signal_floor} must be >= 0")));
    }
    let dims = check_same_dims(echoes.iter().map(|e| e.dims()))?;
    let n = dims.n();
    let results: Vec<(f64, f64, u8)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let signal: Vec<f64> = echoes.iter().map(|e| e.data()[i]).collect();
            fit_t2star_voxel(&signal, tes_ms, method, signal_floor)
        })
        .collect();
    let mut t2 = Vec::with_capacity(n);
    let mut m0 = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for (t, m, f) in results {
        t2.push(t);
        m0.push(m);
        flags.push(f);
    }
    Ok(T2starFit {
        t2star_ms: RealVolume::new(dims, t2)?,
        m0: RealVolume::new(dims, m0)?,
        flags,
    })
}

fn wrap_to_pi(d: f64) -> f64 {
    let r = d.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Off-resonance frequency map in Hz from a complex echo train.
///
/// Per voxel the echo phases are temporally unwrapped (successive
/// differences wrapped to (-pi, pi], then cumulatively summed) and a
/// magnitude-weighted least-squares line phi(TE) = phi0 + 2 pi f TE is fit.
/// Frequencies aliased past 1/(2 dTE) are unrecoverable by construction.
pub fn estimate_fieldmap(echoes: &[ComplexVolume], tes_ms: &[f64]) -> Result<RealVolume> {
    check_tes(tes_ms, echoes.len())?;
    let dims = check_same_dims(echoes.iter().map(|e| e.dims()))?;
    let n = dims.n();
    let n_e = echoes.len();
    let field: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut phase = Vec::with_capacity(n_e);
            let mut points = Vec::with_capacity(n_e);
            for e in echoes {
                let v = e.data()[i];
                phase.push(v.arg());
                points.push((0.0, 0.0, v.norm()));
            }
            let mut unwrapped = phase[0];
            points[0].0 = tes_ms[0];
            points[0].1 = unwrapped;
            for j in 1..n_e {
                unwrapped += wrap_to_pi(phase[j] - phase[j - 1]);
                points[j].0 = tes_ms[j];
                points[j].1 = unwrapped;
            }
            match weighted_line(&points) {
                // slope is rad/ms; f[Hz] = slope / (2 pi * 1e-3)
                Some((_, slope)) => slope * 1000.0 / (2.0 * PI),
                None => 0.0,
            }
        })
        .collect();
    RealVolume::new(dims, field)
}

/// Support mask: voxels whose magnitude reaches `fraction` of the volume
/// maximum. An all-zero magnitude volume yields an empty mask.
pub fn make_brain_mask(magnitude: &RealVolume, fraction: f64) -> Result<RealVolume> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!("mask fraction {fraction} must be in (0, 1)")));
    }
    let peak = magnitude.max();
    let dims = magnitude.dims();
    if !(peak > 0.0) {
        return Ok(RealVolume::zeros(dims));
    }
    let thr = fraction * peak;
    let data = magnitude
        .data()
        .iter()
        .map(|&v| if v >= thr { 1.0 } else { 0.0 })
        .collect();
    Ok(RealVolume::from_computed(dims, data))
}

pub const AXIS_X: usize = 0;
pub const AXIS_Y: usize = 1;
pub const AXIS_Z: usize = 2;

fn axis_stride(dims: Dims, axis: usize) -> (usize, usize) {
    match axis {
        AXIS_X => (dims.nx, 1),
        AXIS_Y => (dims.ny, dims.nx),
        AXIS_Z => (dims.nz, dims.nx * dims.ny),
        _ => unreachable!("axis {axis}"),
    }
}

/// Forward difference along `axis` with the last plane set to zero.
pub fn forward_diff_axis(v: &[f64], dims: Dims, axis: usize) -> Vec<f64> {
    let (n_axis, stride) = axis_stride(dims, axis);
    let mut out = vec![0.0; v.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = i / stride % n_axis;
        if pos + 1 < n_axis {
            *o = v[i + stride] - v[i];
        }
    }
    out
}

/// Adjoint of [`forward_diff_axis`]: (D^T y)[i] = y[i-1] - y[i] with the
/// boundary terms dropped (negative backward difference).
pub fn forward_diff_axis_adjoint(y: &[f64], dims: Dims, axis: usize) -> Vec<f64> {
    let (n_axis, stride) = axis_stride(dims, axis);
    let mut out = vec![0.0; y.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = i / stride % n_axis;
        let mut acc = 0.0;
        if pos > 0 {
            acc += y[i - stride];
        }
        if pos + 1 < n_axis {
            acc -= y[i];
        }
        *o = acc;
    }
    out
}

/// Sum over axes of D^T D x — the normal operator of the forward-difference
/// gradient used as the QSM regularizer.
fn gradient_normal(x: &[f64], dims: Dims) -> Vec<f64> {
    let mut acc = vec![0.0; x.len()];
    for axis in [AXIS_X, AXIS_Y, AXIS_Z] {
        let d = forward_diff_axis(x, dims, axis);
        let a = forward_diff_axis_adjoint(&d, dims, axis);
        for (s, v) in acc.iter_mut().zip(a) {
            *s += v;
        }
    }
    acc
}

fn gradient_energy(x: &[f64], dims: Dims) -> f64 {
    [AXIS_X, AXIS_Y, AXIS_Z]
        .iter()
        .map(|&axis| {
            forward_diff_axis(x, dims, axis)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct QsmResult {
    pub chi_ppm: RealVolume,
    /// sqrt of the full objective ||M(A x - f)||^2 + lambda ||grad x||^2 per
    /// CG iteration (index 0 = start); non-increasing by CG's monotonicity
    /// on the underlying quadratic.
    pub residual_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Dipole forward model A x = Re F^-1 D F x in ppm units. D is real and
/// even in k, so A is its own adjoint on real volumes.
fn dipole_apply(x: &[f64], dims: Dims, kernel: &[f64]) -> Result<Vec<f64>> {
    let v = ComplexVolume::from_computed(
        dims,
        Domain::Image,
        x.iter().map(|&r| num_complex::Complex64::new(r, 0.0)).collect(),
    );
    let mut k = fft3_centered(&v)?.data().to_vec();
    for (kv, d) in k.iter_mut().zip(kernel) {
        *kv *= *d;
    }
    let img = ifft3_centered(&ComplexVolume::from_computed(dims, Domain::Kspace, k))?;
    Ok(img.data().iter().map(|c| c.re).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tikhonov-gradient dipole inversion: solves
/// argmin_chi ||M(A chi - f/gamma B0)||^2 + lambda ||grad chi||^2
/// by conjugate gradient on the normal equations. Stops at relative
/// residual < 1e-6 or 200 iterations.
pub fn qsm_invert(
    fieldmap_hz: &RealVolume,
    brain_mask: &RealVolume,
    geometry: VoxelGeometry,
    b0_t: f64,
    lambda: f64,
) -> Result<QsmResult> {
    const MAX_ITERS: usize = 200;
    const REL_TOL: f64 = 1e-6;
    let dims = fieldmap_hz.dims();
    if brain_mask.dims() != dims {
        return Err(Error::dim(format!(
            "mask dims {} differ from field dims {}",
            brain_mask.dims(),
            dims
        )));
    }
    if !(b0_t > 0.0) || !b0_t.is_finite() {
        return Err(Error::arg(format!("field strength {b0_t} T must be positive")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!("lambda {lambda} must be >= 0")));
    }
    let mask = brain_mask.data();
    if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::arg("brain mask must be 0/1 valued"));
    }
    if !mask.iter().any(|&v| v == 1.0) {
        return Err(Error::arg("brain mask is empty"));
    }

    let kernel = dipole_kernel(dims, geometry);
    let f_norm: Vec<f64> = fieldmap_hz
        .data()
        .iter()
        .map(|&v| v / (GAMMA_BAR_MHZ_PER_T * b0_t))
        .collect();
    let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(mask).map(|(x, m)| x * m).collect() };
    let normal = |x: &[f64]| -> Result<Vec<f64>> {
        let ax = dipole_apply(x, dims, &kernel)?;
        let mut out = dipole_apply(&masked(&ax), dims, &kernel)?;
        if lambda > 0.0 {
            for (o, r) in out.iter_mut().zip(gradient_normal(x, dims)) {
                *o += lambda * r;
            }
        }
        Ok(out)
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let ax = dipole_apply(x, dims, &kernel)?;
        let data: f64 = ax
            .iter()
            .zip(&f_norm)
            .zip(mask)
            .map(|((a, f), m)| {
                let r = m * (a - f);
                r * r
            })
            .sum();
        Ok(data + lambda * gradient_energy(x, dims))
    };

    let b = dipole_apply(&masked(&f_norm), dims, &kernel)?;
    let n = dims.n();
    let mut x = vec![0.0; n];
    let mut trace = vec![objective(&x)?.sqrt()];
    let b_norm = dot(&b, &b).sqrt();
    if b_norm == 0.0 {
        return Ok(QsmResult {
            chi_ppm: RealVolume::zeros(dims),
            residual_trace: trace,
            iterations: 0,
            converged: true,
        });
    }
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let np = normal(&p)?;
        let pnp = dot(&p, &np);
        if !(pnp > 0.0) || !pnp.is_finite() {
            break;
        }
        let alpha = rs / pnp;
        for ((xi, pi), (ri, ni)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&np)) {
            *xi += alpha * pi;
            *ri -= alpha * ni;
        }
        iterations += 1;
        trace.push(objective(&x)?.sqrt());
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() / b_norm < REL_TOL {
            converged = true;
            break;
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("QSM solution at voxel {i}")));
    }
    Ok(QsmResult {
        chi_ppm: RealVolume::from_computed(dims, x),
        residual_trace: trace,
        iterations,
        converged,
    })
}

/// The full set of derived maps; all volumes share dims.
#[derive(Debug, Clone)]
pub struct ParametricMaps {
    pub pdw: RealVolume,
    pub t1w: RealVolume,
    pub t2star_ms: RealVolume,
    pub fieldmap_hz: RealVolume,
    pub chi_ppm: RealVolume,
    pub brain_mask: RealVolume,
}

impl ParametricMaps {
    pub fn validate(&self) -> Result<()> {
        check_same_dims(
            [
                self.pdw.dims(),
                self.t1w.dims(),
                self.t2star_ms.dims(),
                self.fieldmap_hz.dims(),
                self.chi_ppm.dims(),
                self.brain_mask.dims(),
            ]
            .into_iter(),
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MapsParams {
    pub qsm_lambda: f64,
    pub mask_fraction: f64,
    pub t2star_method: T2starMethod,
    /// T2* signal floor as a fraction of the first FA2 echo's peak magnitude.
    pub signal_floor_fraction: f64,
}

impl Default for MapsParams {
    fn default() -> Self {
        MapsParams {
            qsm_lambda: DEFAULT_QSM_LAMBDA,
            mask_fraction: DEFAULT_MASK_FRACTION,
            t2star_method: T2starMethod::Nlls,
            signal_floor_fraction: 0.05,
        }
    }
}

/// Compute every parametric map from one reconstructed scan.
///
/// `magnitudes_by_fa[fa][echo]` are coil-combined magnitudes (two FA groups
/// required); `phase_echoes` is the FA2 echo train of a single reference
/// coil, kept complex so phases add coherently. T2* is fit on the FA2
/// magnitudes; the brain mask comes from the PDW composite; QSM inverts the
/// fitted field inside that mask.
pub fn compute_maps(
    magnitudes_by_fa: &[Vec<RealVolume>],
    phase_echoes: &[ComplexVolume],
    tes_ms: &[f64],
    geometry: VoxelGeometry,
    b0_t: f64,
    params: &MapsParams,
) -> Result<ParametricMaps> {
    if magnitudes_by_fa.len() < 2 {
        return Err(Error::arg(format!(
            "composites need two flip angle groups, got {}",
            magnitudes_by_fa.len()
        )));
    }
    let pdw = composite_average(magnitudes_by_fa, FaGroup::Fa1)?;
    let t1w = composite_average(magnitudes_by_fa, FaGroup::Fa2)?;
    let fa2 = &magnitudes_by_fa[FaGroup::Fa2.index()];
    let floor = params.signal_floor_fraction * fa2[0].max();
    let fit = fit_t2star(fa2, tes_ms, params.t2star_method, floor)?;
    let fieldmap_hz = estimate_fieldmap(phase_echoes, tes_ms)?;
    let brain_mask = make_brain_mask(&pdw, params.mask_fraction)?;
    let qsm = qsm_invert(&fieldmap_hz, &brain_mask, geometry, b0_t, params.qsm_lambda)?;
    let maps = ParametricMaps {
        pdw,
        t1w,
        t2star_ms: fit.t2star_ms,
        fieldmap_hz,
        chi_ppm: qsm.chi_ppm,
        brain_mask,
    };
    maps.validate()?;
    Ok(maps)
}
