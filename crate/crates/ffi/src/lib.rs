//! C ABI for the reconstruction pipeline.
//!
//! Conventions: every fallible function returns an `MGRE_*` status code and
//! writes results through out-pointers; `mgre_last_error` returns the
//! message of the most recent failure on the calling thread. Handles are
//! opaque and freed with their matching `_free` function. All entry points
//! catch panics and turn them into `MGRE_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mgre::cascade::{cascade_forward, load_model, CascadeModel};
use mgre::fourier::{fft3_centered, ifft3_centered};
use mgre::io::{read_cvol, write_cvol};
use mgre::metrics::{psnr, rmse, ssim};
use mgre::sampling::{apply_mask, mask_acceleration, poisson_disk_mask, read_mask, write_mask,
    SamplingMask};
use mgre::volume::{ComplexVolume, Domain};
use mgre::Error;

pub const MGRE_OK: c_int = 0;
pub const MGRE_ERR_ARGUMENT: c_int = 1;
pub const MGRE_ERR_DIMS: c_int = 2;
pub const MGRE_ERR_IO: c_int = 3;
pub const MGRE_ERR_FORMAT: c_int = 4;
pub const MGRE_ERR_NUMERIC: c_int = 5;
pub const MGRE_ERR_PROVENANCE: c_int = 6;
pub const MGRE_ERR_NULL_POINTER: c_int = 7;
pub const MGRE_ERR_PANIC: c_int = 8;

/// Complex 3D volume handle.
pub struct MgreVolume(ComplexVolume);
/// Sampling mask handle.
pub struct MgreMask(SamplingMask);
/// Trained cascade model handle.
pub struct MgreModel(CascadeModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped");
    });
}

fn code_for(err: &Error) -> c_int {
    match err {
        Error::InvalidArgument(_) | Error::UnreachableAcceleration { .. } => MGRE_ERR_ARGUMENT,
        Error::DimMismatch(_) => MGRE_ERR_DIMS,
        Error::Io(_) | Error::MissingInput(_) => MGRE_ERR_IO,
        Error::Format { .. } | Error::Json(_) => MGRE_ERR_FORMAT,
        Error::NonFinite(_) => MGRE_ERR_NUMERIC,
        Error::Provenance(_) => MGRE_ERR_PROVENANCE,
    }
}

fn fail(err: Error) -> c_int {
    let code = code_for(&err);
    set_last_error(&err.to_string());
    code
}

/// Run `f` with panic containment; map Ok(code) through, panics to a code.
fn guarded(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in mgre".to_string());
            set_last_error(&msg);
            MGRE_ERR_PANIC
        }
    }
}

fn null_fail(what: &str) -> c_int {
    set_last_error(&format!("{what} must not be NULL"));
    MGRE_ERR_NULL_POINTER
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, c_int> {
    if ptr.is_null() {
        return Err(null_fail(what));
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_last_error(&format!("{what} is not valid UTF-8"));
            Err(MGRE_ERR_ARGUMENT)
        }
    }
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap` bytes). Returns the full message length in bytes,
/// excluding the NUL; call with `buf == NULL` to query the length.
#[no_mangle]
pub unsafe extern "C" fn mgre_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mgre_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- complex volumes ----

/// Read a .cvol file. `kspace` selects the k-space domain tag (nonzero) or
/// image domain (zero).
#[no_mangle]
pub unsafe extern "C" fn mgre_volume_read(
    path: *const c_char,
    kspace: c_int,
    out: *mut *mut MgreVolume,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return null_fail("out");
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let domain = if kspace != 0 { Domain::Kspace } else { Domain::Image };
        match read_cvol(path, domain) {
            Ok(vol) => {
                unsafe { *out = Box::into_raw(Box::new(MgreVolume(vol))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_volume_write(path: *const c_char, vol: *const MgreVolume) -> c_int {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let Some(vol) = (unsafe { vol.as_ref() }) else {
            return null_fail("vol");
        };
        match write_cvol(path, &vol.0) {
            Ok(()) => MGRE_OK,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_volume_free(vol: *mut MgreVolume) {
    if !vol.is_null() {
        drop(unsafe { Box::from_raw(vol) });
    }
}

#[no_mangle]
pub unsafe extern "C" fn mgre_volume_dims(
    vol: *const MgreVolume,
    nx: *mut usize,
    ny: *mut usize,
    nz: *mut usize,
) -> c_int {
    guarded(|| {
        let Some(vol) = (unsafe { vol.as_ref() }) else {
            return null_fail("vol");
        };
        if nx.is_null() || ny.is_null() || nz.is_null() {
            return null_fail("dims out-pointers");
        }
        let d = vol.0.dims();
        unsafe {
            *nx = d.nx;
            *ny = d.ny;
            *nz = d.nz;
        }
        MGRE_OK
    })
}

/// Copy the volume into `data` as interleaved (re, im) little-endian f64
/// pairs, x fastest. `cap` is the capacity of `data` in f64 elements and
/// must be at least `2 * nx * ny * nz`.
#[no_mangle]
pub unsafe extern "C" fn mgre_volume_copy(
    vol: *const MgreVolume,
    data: *mut f64,
    cap: usize,
) -> c_int {
    guarded(|| {
        let Some(vol) = (unsafe { vol.as_ref() }) else {
            return null_fail("vol");
        };
        if data.is_null() {
            return null_fail("data");
        }
        let n = vol.0.dims().n();
        if cap < 2 * n {
            set_last_error(&format!("need capacity for {} f64s, got {cap}", 2 * n));
            return MGRE_ERR_ARGUMENT;
        }
        for (i, c) in vol.0.data().iter().enumerate() {
            unsafe {
                *data.add(2 * i) = c.re;
                *data.add(2 * i + 1) = c.im;
            }
        }
        MGRE_OK
    })
}

// ---- Fourier ----

#[no_mangle]
pub unsafe extern "C" fn mgre_fft(vol: *const MgreVolume, out: *mut *mut MgreVolume) -> c_int {
    guarded(|| {
        let Some(vol) = (unsafe { vol.as_ref() }) else {
            return null_fail("vol");
        };
        if out.is_null() {
            return null_fail("out");
        }
        match fft3_centered(&vol.0) {
            Ok(k) => {
                unsafe { *out = Box::into_raw(Box::new(MgreVolume(k))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_ifft(vol: *const MgreVolume, out: *mut *mut MgreVolume) -> c_int {
    guarded(|| {
        let Some(vol) = (unsafe { vol.as_ref() }) else {
            return null_fail("vol");
        };
        if out.is_null() {
            return null_fail("out");
        }
        match ifft3_centered(&vol.0) {
            Ok(img) => {
                unsafe { *out = Box::into_raw(Box::new(MgreVolume(img))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

// ---- sampling masks ----

#[no_mangle]
pub unsafe extern "C" fn mgre_mask_generate(
    ny: usize,
    nz: usize,
    target_accel: f64,
    calib_y: usize,
    calib_z: usize,
    seed: u64,
    out: *mut *mut MgreMask,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return null_fail("out");
        }
        match poisson_disk_mask(ny, nz, target_accel, (calib_y, calib_z), seed) {
            Ok(mask) => {
                unsafe { *out = Box::into_raw(Box::new(MgreMask(mask))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_mask_read(path: *const c_char, out: *mut *mut MgreMask) -> c_int {
    guarded(|| {
        if out.is_null() {
            return null_fail("out");
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match read_mask(path) {
            Ok(mask) => {
                unsafe { *out = Box::into_raw(Box::new(MgreMask(mask))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_mask_write(path: *const c_char, mask: *const MgreMask) -> c_int {
    guarded(|| {
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let Some(mask) = (unsafe { mask.as_ref() }) else {
            return null_fail("mask");
        };
        match write_mask(path, &mask.0) {
            Ok(()) => MGRE_OK,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_mask_free(mask: *mut MgreMask) {
    if !mask.is_null() {
        drop(unsafe { Box::from_raw(mask) });
    }
}

/// Achieved acceleration factor (plane size / sampled count).
#[no_mangle]
pub unsafe extern "C" fn mgre_mask_acceleration(mask: *const MgreMask, out: *mut f64) -> c_int {
    guarded(|| {
        let Some(mask) = (unsafe { mask.as_ref() }) else {
            return null_fail("mask");
        };
        if out.is_null() {
            return null_fail("out");
        }
        match mask_acceleration(&mask.0) {
            Ok(a) => {
                unsafe { *out = a };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Zero every k-space bin outside the mask's sampled (y, z) lines.
#[no_mangle]
pub unsafe extern "C" fn mgre_apply_mask(
    kspace: *const MgreVolume,
    mask: *const MgreMask,
    out: *mut *mut MgreVolume,
) -> c_int {
    guarded(|| {
        let Some(k) = (unsafe { kspace.as_ref() }) else {
            return null_fail("kspace");
        };
        let Some(mask) = (unsafe { mask.as_ref() }) else {
            return null_fail("mask");
        };
        if out.is_null() {
            return null_fail("out");
        }
        match apply_mask(&k.0, &mask.0) {
            Ok(masked) => {
                unsafe { *out = Box::into_raw(Box::new(MgreVolume(masked))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

// ---- models and reconstruction ----

#[no_mangle]
pub unsafe extern "C" fn mgre_model_load(path: *const c_char, out: *mut *mut MgreModel) -> c_int {
    guarded(|| {
        if out.is_null() {
            return null_fail("out");
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match load_model(path) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(MgreModel(model))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgre_model_free(model: *mut MgreModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Zero-filled reconstruction: inverse FFT of the measured k-space.
#[no_mangle]
pub unsafe extern "C" fn mgre_recon_zerofill(
    kspace: *const MgreVolume,
    out: *mut *mut MgreVolume,
) -> c_int {
    unsafe { mgre_ifft(kspace, out) }
}

/// Cascade reconstruction of one masked k-space volume.
#[no_mangle]
pub unsafe extern "C" fn mgre_recon_cascade(
    model: *const MgreModel,
    kspace: *const MgreVolume,
    mask: *const MgreMask,
    out: *mut *mut MgreVolume,
) -> c_int {
    guarded(|| {
        let Some(model) = (unsafe { model.as_ref() }) else {
            return null_fail("model");
        };
        let Some(k) = (unsafe { kspace.as_ref() }) else {
            return null_fail("kspace");
        };
        let Some(mask) = (unsafe { mask.as_ref() }) else {
            return null_fail("mask");
        };
        if out.is_null() {
            return null_fail("out");
        }
        match cascade_forward(&model.0, &k.0, &mask.0) {
            Ok(img) => {
                unsafe { *out = Box::into_raw(Box::new(MgreVolume(img))) };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

// ---- metrics ----

fn metric2(
    reference: *const MgreVolume,
    test: *const MgreVolume,
    out: *mut f64,
    f: impl Fn(&mgre::volume::RealVolume, &mgre::volume::RealVolume) -> mgre::Result<f64>,
) -> c_int {
    guarded(|| {
        let Some(reference) = (unsafe { reference.as_ref() }) else {
            return null_fail("reference");
        };
        let Some(test) = (unsafe { test.as_ref() }) else {
            return null_fail("test");
        };
        if out.is_null() {
            return null_fail("out");
        }
        match f(&reference.0.magnitude(), &test.0.magnitude()) {
            Ok(v) => {
                unsafe { *out = v };
                MGRE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// PSNR (dB) between the magnitudes of two complex volumes; +inf when equal.
#[no_mangle]
pub unsafe extern "C" fn mgre_psnr(
    reference: *const MgreVolume,
    test: *const MgreVolume,
    out: *mut f64,
) -> c_int {
    metric2(reference, test, out, |a, b| psnr(a, b))
}

/// Mean SSIM over axial slices of the magnitudes of two complex volumes.
#[no_mangle]
pub unsafe extern "C" fn mgre_ssim(
    reference: *const MgreVolume,
    test: *const MgreVolume,
    out: *mut f64,
) -> c_int {
    metric2(reference, test, out, |a, b| ssim(a, b))
}

/// Root-mean-square error between magnitudes of two complex volumes.
#[no_mangle]
pub unsafe extern "C" fn mgre_rmse(
    reference: *const MgreVolume,
    test: *const MgreVolume,
    out: *mut f64,
) -> c_int {
    metric2(reference, test, out, |a, b| rmse(a, b, None))
}
