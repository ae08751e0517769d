//! Dense channel-major real tensors for the CNN path.
//!
//! Layout: `data[x + nx*(y + ny*(z + nz*c))]` — each channel is one
//! contiguous x-fastest volume. Complex volumes map to two channels, real in
//! channel 0 and imaginary in channel 1.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, nx: usize, ny: usize, nz: usize) -> Self {
        Tensor {
            channels,
            nx,
            ny,
            nz,
            data: vec![0.0; channels * nx * ny * nz],
        }
    }

    pub fn volume_len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels
            && self.nx == other.nx
            && self.ny == other.ny
            && self.nz == other.nz
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        let v = self.volume_len();
        &self.data[c * v..(c + 1) * v]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let v = self.volume_len();
        &mut self.data[c * v..(c + 1) * v]
    }

    /// Real part to channel 0, imaginary to channel 1.
    pub fn from_complex(v: &ComplexVolume) -> Self {
        let d = v.dims();
        let mut t = Tensor::zeros(2, d.nx, d.ny, d.nz);
        let n = d.n();
        for (i, s) in v.data().iter().enumerate() {
            t.data[i] = s.re;
            t.data[n + i] = s.im;
        }
        t
    }

    pub fn to_complex(&self, domain: Domain) -> Result<ComplexVolume> {
        if self.channels != 2 {
            return Err(Error::dim(format!(
                "complex conversion needs 2 channels, tensor has {}",
                self.channels
            )));
        }
        let dims = Dims::new(self.nx, self.ny, self.nz)?;
        let n = dims.n();
        let data = (0..n)
            .map(|i| Complex64::new(self.data[i], self.data[n + i]))
            .collect();
        Ok(ComplexVolume::from_computed(dims, domain, data))
    }
}

/// max(0, x) elementwise.
pub fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for v in out.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of relu: pass upstream gradient where the activation is strictly
/// positive (subgradient at 0 taken as 0). `activated` is the relu output.
pub fn relu_backward(activated: &Tensor, upstream: &Tensor) -> Tensor {
    debug_assert!(activated.same_shape(upstream));
    let mut out = upstream.clone();
    for (g, a) in out.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Mean squared error over all tensor entries.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::dim(format!(
            "mse shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data.len() as f64;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// MSE plus its gradient with respect to `pred`: 2(pred - target)/N.
pub fn mse_loss_with_grad(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let loss = mse_loss(pred, target)?;
    let n = pred.data.len() as f64;
    let mut grad = pred.clone();
    for (g, t) in grad.data.iter_mut().zip(&target.data) {
        *g = 2.0 * (*g - t) / n;
    }
    Ok((loss, grad))
}
