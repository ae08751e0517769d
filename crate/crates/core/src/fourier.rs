//! Centered orthonormal 3D Fourier transforms.
//!
//! Conventions: the DC component sits at the array centre (`floor(n/2)` along
//! each axis) in both domains, and both directions scale by `1/sqrt(N)`, so
//! the transform is unitary. Mixed-radix and prime lengths are handled by the
//! FFT backend, so arbitrary dimensions work.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, Domain};

static PLAN_CACHE: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry((n, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            planner.plan_fft(
                n,
                if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                },
            )
        })
        .clone()
}

/// Map a centered-grid index to its pre-shift position: out[i] = in[(i + n/2) % n].
#[inline]
fn ifftshift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Map a pre-shift index to its centered-grid position: out[i] = in[(i + n - n/2) % n].
#[inline]
fn fftshift_index(i: usize, n: usize) -> usize {
    (i + (n - n / 2)) % n
}

fn shift3(data: &[Complex64], dims: Dims, index_map: fn(usize, usize) -> usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for z in 0..dims.nz {
        let sz = index_map(z, dims.nz);
        for y in 0..dims.ny {
            let sy = index_map(y, dims.ny);
            let dst = dims.idx(0, y, z);
            for x in 0..dims.nx {
                out[dst + x] = data[dims.idx(index_map(x, dims.nx), sy, sz)];
            }
        }
    }
    out
}

/// In-place FFT along each axis of a flat volume (x fastest).
fn fft_axes(data: &mut [Complex64], dims: Dims, forward: bool) {
    // x axis: rows are contiguous
    let fft_x = plan(dims.nx, forward);
    for row in data.chunks_exact_mut(dims.nx) {
        fft_x.process(row);
    }
    // y axis
    let fft_y = plan(dims.ny, forward);
    let mut lane = vec![Complex64::new(0.0, 0.0); dims.ny];
    for z in 0..dims.nz {
        for x in 0..dims.nx {
            for y in 0..dims.ny {
                lane[y] = data[dims.idx(x, y, z)];
            }
            fft_y.process(&mut lane);
            for y in 0..dims.ny {
                data[dims.idx(x, y, z)] = lane[y];
            }
        }
    }
    // z axis
    let fft_z = plan(dims.nz, forward);
    let mut lane = vec![Complex64::new(0.0, 0.0); dims.nz];
    for y in 0..dims.ny {
        for x in 0..dims.nx {
            for z in 0..dims.nz {
                lane[z] = data[dims.idx(x, y, z)];
            }
            fft_z.process(&mut lane);
            for z in 0..dims.nz {
                data[dims.idx(x, y, z)] = lane[z];
            }
        }
    }
}

fn transform(vol: &ComplexVolume, forward: bool, out_domain: Domain) -> ComplexVolume {
    let dims = vol.dims();
    let mut work = shift3(vol.data(), dims, ifftshift_index);
    fft_axes(&mut work, dims, forward);
    let mut out = shift3(&work, dims, fftshift_index);
    let scale = 1.0 / (dims.n() as f64).sqrt();
    for v in out.iter_mut() {
        *v *= scale;
    }
    ComplexVolume::from_computed(dims, out_domain, out)
}

/// Forward centered orthonormal 3D FFT (image -> k-space).
pub fn fft3_centered(vol: &ComplexVolume) -> Result<ComplexVolume> {
    if vol.domain() != Domain::Image {
        return Err(Error::arg(
            "fft3_centered expects an image-domain volume".to_string(),
        ));
    }
    Ok(transform(vol, true, Domain::Kspace))
}

/// Inverse centered orthonormal 3D FFT (k-space -> image).
pub fn ifft3_centered(vol: &ComplexVolume) -> Result<ComplexVolume> {
    if vol.domain() != Domain::Kspace {
        return Err(Error::arg(
            "ifft3_centered expects a k-space-domain volume".to_string(),
        ));
    }
    Ok(transform(vol, false, Domain::Image))
}

/// Centre index (DC position) along an axis of length `n`.
pub fn center_index(n: usize) -> usize {
    n / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(nx: usize, ny: usize, nz: usize, seed: u64, domain: Domain) -> ComplexVolume {
        let dims = Dims::new(nx, ny, nz).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.n())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexVolume::new(dims, domain, data).unwrap()
    }

    fn max_rel_err(a: &ComplexVolume, b: &ComplexVolume) -> f64 {
        let norm = b.l2_norm().max(1e-300);
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0f64, f64::max)
            / norm
    }

    #[test]
    fn impulse_at_center_gives_flat_kspace() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let mut v = ComplexVolume::zeros(dims, Domain::Image);
        let c = dims.idx(2, 2, 2);
        v.data_mut()[c] = Complex64::new(1.0, 0.0);
        let k = fft3_centered(&v).unwrap();
        let expect = 1.0 / 8.0; // 1/sqrt(64)
        for s in k.data() {
            assert!((s.re - expect).abs() < 1e-12 && s.im.abs() < 1e-12);
        }
    }

    #[test]
    fn flat_kspace_gives_center_impulse() {
        let dims = Dims::new(4, 6, 2).unwrap();
        let c = 0.37;
        let k = ComplexVolume::new(
            dims,
            Domain::Kspace,
            vec![Complex64::new(c, 0.0); dims.n()],
        )
        .unwrap();
        let img = ifft3_centered(&k).unwrap();
        let n = dims.n() as f64;
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let v = img.get(x, y, z);
                    if (x, y, z) == (2, 3, 1) {
                        assert!((v.re - c * n.sqrt()).abs() < 1e-10, "center value {v}");
                    } else {
                        assert!(v.norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let v = random_volume(8, 6, 4, 3, Domain::Image);
        let back = ifft3_centered(&fft3_centered(&v).unwrap()).unwrap();
        assert!(max_rel_err(&back, &v) < 1e-6);

        let k = random_volume(8, 6, 4, 4, Domain::Kspace);
        let back = fft3_centered(&ifft3_centered(&k).unwrap()).unwrap();
        assert!(max_rel_err(&back, &k) < 1e-6);
    }

    #[test]
    fn parseval_energy_preserved() {
        let v = random_volume(8, 8, 8, 5, Domain::Image);
        let k = fft3_centered(&v).unwrap();
        let rel = (v.energy() - k.energy()).abs() / v.energy();
        assert!(rel < 1e-12, "energy mismatch {rel}");
    }

    #[test]
    fn unitarity_on_random_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let v = random_volume(
                rng.random_range(1..=16),
                rng.random_range(1..=16),
                rng.random_range(1..=16),
                rng.random(),
                Domain::Image,
            );
            let k = fft3_centered(&v).unwrap();
            let rel = (v.l2_norm() - k.l2_norm()).abs() / v.l2_norm().max(1e-30);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn ifft_linearity() {
        let k1 = random_volume(4, 4, 4, 6, Domain::Kspace);
        let k2 = random_volume(4, 4, 4, 7, Domain::Kspace);
        let a = Complex64::new(0.7, -0.3);
        let dims = k1.dims();
        let combo = ComplexVolume::new(
            dims,
            Domain::Kspace,
            k1.data()
                .iter()
                .zip(k2.data())
                .map(|(u, v)| a * u + v)
                .collect(),
        )
        .unwrap();
        let lhs = ifft3_centered(&combo).unwrap();
        let i1 = ifft3_centered(&k1).unwrap();
        let i2 = ifft3_centered(&k2).unwrap();
        for i in 0..dims.n() {
            let rhs = a * i1.data()[i] + i2.data()[i];
            assert!((lhs.data()[i] - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn odd_dims_round_trip() {
        let v = random_volume(5, 7, 3, 8, Domain::Image);
        let back = ifft3_centered(&fft3_centered(&v).unwrap()).unwrap();
        assert!(max_rel_err(&back, &v) < 1e-6);
    }

    #[test]
    fn domain_enforced() {
        let v = random_volume(4, 4, 4, 10, Domain::Kspace);
        assert!(fft3_centered(&v).is_err());
        let v = random_volume(4, 4, 4, 10, Domain::Image);
        assert!(ifft3_centered(&v).is_err());
    }
}
