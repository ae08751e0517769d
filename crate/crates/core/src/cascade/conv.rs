//! 3D convolution layers (cross-correlation, "same" zero padding) with
//! hand-rolled reverse-mode gradients.
//!
//! All three passes — forward, gradient w.r.t. input, gradient w.r.t.
//! weights — walk the kernel offsets once and touch contiguous x rows in the
//! inner loop, so the hot paths are straight slice arithmetic.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cascade::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kx: usize,
    pub ky: usize,
    pub kz: usize,
    /// Kernel entries, x offset fastest: `w[dx + kx*(dy + ky*(dz + kz*(ci + in_c*co)))]`.
    pub w: Vec<f64>,
    /// One bias per output channel.
    pub b: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(name: impl Into<String>, in_c: usize, out_c: usize, kernel: (usize, usize, usize)) -> Result<Self> {
        let (kx, ky, kz) = kernel;
        if kx % 2 == 0 || ky % 2 == 0 || kz % 2 == 0 || kx == 0 || ky == 0 || kz == 0 {
            return Err(Error::arg(format!(
                "kernel extents must be odd and positive, got {}x{}x{}",
                kx, ky, kz
            )));
        }
        if in_c == 0 || out_c == 0 {
            return Err(Error::arg("conv layer needs at least one channel".to_string()));
        }
        Ok(ConvLayer {
            name: name.into(),
            in_c,
            out_c,
            kx,
            ky,
            kz,
            w: vec![0.0; out_c * in_c * kx * ky * kz],
            b: vec![0.0; out_c],
        })
    }

    /// He-style init: kernel entries ~ N(0, 2/fan_in), biases zero.
    pub fn he_init(
        name: impl Into<String>,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layer = ConvLayer::zeros(name, in_c, out_c, kernel)?;
        let fan_in = (in_c * layer.kx * layer.ky * layer.kz) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in layer.w.iter_mut() {
            *w = normal.sample(rng);
        }
        Ok(layer)
    }

    #[inline]
    pub fn w_idx(&self, co: usize, ci: usize, dx: usize, dy: usize, dz: usize) -> usize {
        dx + self.kx * (dy + self.ky * (dz + self.kz * (ci + self.in_c * co)))
    }

    pub fn n_parameters(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Cross-correlation with same-size zero padding plus per-channel bias.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.channels != self.in_c {
            return Err(Error::dim(format!(
                "{}: input has {} channels, layer expects {}",
                self.name, input.channels, self.in_c
            )));
        }
        let (nx, ny, nz) = (input.nx, input.ny, input.nz);
        let mut out = Tensor::zeros(self.out_c, nx, ny, nz);
        for co in 0..self.out_c {
            out.channel_mut(co).fill(self.b[co]);
        }
        let (cx, cy, cz) = (self.kx / 2, self.ky / 2, self.kz / 2);
        for co in 0..self.out_c {
            for ci in 0..self.in_c {
                for dz in 0..self.kz {
                    let oz = dz as isize - cz as isize;
                    for dy in 0..self.ky {
                        let oy = dy as isize - cy as isize;
                        for dx in 0..self.kx {
                            let ox = dx as isize - cx as isize;
                            let w = self.w[self.w_idx(co, ci, dx, dy, dz)];
                            if w == 0.0 {
                                continue;
                            }
                            shifted_axpy(
                                out.channel_mut(co),
                                input.channel(ci),
                                nx,
                                ny,
                                nz,
                                (ox, oy, oz),
                                w,
                            );
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient of the loss w.r.t. the layer input given the gradient w.r.t.
    /// the output (same spatial dims).
    pub fn backward_input(&self, upstream: &Tensor) -> Result<Tensor> {
        if upstream.channels != self.out_c {
            return Err(Error::dim(format!(
                "{}: upstream has {} channels, layer produces {}",
                self.name, upstream.channels, self.out_c
            )));
        }
        let (nx, ny, nz) = (upstream.nx, upstream.ny, upstream.nz);
        let mut g_in = Tensor::zeros(self.in_c, nx, ny, nz);
        let (cx, cy, cz) = (self.kx / 2, self.ky / 2, self.kz / 2);
        for co in 0..self.out_c {
            for ci in 0..self.in_c {
                for dz in 0..self.kz {
                    let oz = cz as isize - dz as isize; // negated offset
                    for dy in 0..self.ky {
                        let oy = cy as isize - dy as isize;
                        for dx in 0..self.kx {
                            let ox = cx as isize - dx as isize;
                            let w = self.w[self.w_idx(co, ci, dx, dy, dz)];
                            if w == 0.0 {
                                continue;
                            }
                            shifted_axpy(
                                g_in.channel_mut(ci),
                                upstream.channel(co),
                                nx,
                                ny,
                                nz,
                                (ox, oy, oz),
                                w,
                            );
                        }
                    }
                }
            }
        }
        Ok(g_in)
    }

    /// Gradients w.r.t. kernel entries and biases.
    pub fn grad_params(&self, input: &Tensor, upstream: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.channels != self.in_c || upstream.channels != self.out_c {
            return Err(Error::dim(format!(
                "{}: channel mismatch in grad_params",
                self.name
            )));
        }
        let (nx, ny, nz) = (input.nx, input.ny, input.nz);
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.out_c];
        let (cx, cy, cz) = (self.kx / 2, self.ky / 2, self.kz / 2);
        for co in 0..self.out_c {
            gb[co] = upstream.channel(co).iter().sum();
            for ci in 0..self.in_c {
                for dz in 0..self.kz {
                    let oz = dz as isize - cz as isize;
                    for dy in 0..self.ky {
                        let oy = dy as isize - cy as isize;
                        for dx in 0..self.kx {
                            let ox = dx as isize - cx as isize;
                            gw[self.w_idx(co, ci, dx, dy, dz)] = shifted_dot(
                                upstream.channel(co),
                                input.channel(ci),
                                nx,
                                ny,
                                nz,
                                (ox, oy, oz),
                            );
                        }
                    }
                }
            }
        }
        Ok((gw, gb))
    }
}

/// Valid output x-range [start, end) so that x + o stays inside [0, n).
#[inline]
fn axis_range(n: usize, o: isize) -> (usize, usize) {
    let start = (-o).max(0) as usize;
    let end_i = (n as isize).min(n as isize - o);
    if end_i <= start as isize {
        (0, 0)
    } else {
        (start, end_i as usize)
    }
}

/// out(x,y,z) += w * src(x+ox, y+oy, z+oz) over the in-bounds region.
fn shifted_axpy(
    out: &mut [f64],
    src: &[f64],
    nx: usize,
    ny: usize,
    nz: usize,
    (ox, oy, oz): (isize, isize, isize),
    w: f64,
) {
    let (x0, x1) = axis_range(nx, ox);
    let (y0, y1) = axis_range(ny, oy);
    let (z0, z1) = axis_range(nz, oz);
    if x0 >= x1 {
        return;
    }
    for z in z0..z1 {
        let zi = (z as isize + oz) as usize;
        for y in y0..y1 {
            let yi = (y as isize + oy) as usize;
            let o_base = x0 + nx * (y + ny * z);
            let s_base = (x0 as isize + ox) as usize + nx * (yi + ny * zi);
            let dst = &mut out[o_base..o_base + (x1 - x0)];
            let s = &src[s_base..s_base + (x1 - x0)];
            for (d, v) in dst.iter_mut().zip(s) {
                *d += w * v;
            }
        }
    }
}

/// sum over the in-bounds region of a(x,y,z) * b(x+ox, y+oy, z+oz).
fn shifted_dot(
    a: &[f64],
    b: &[f64],
    nx: usize,
    ny: usize,
    nz: usize,
    (ox, oy, oz): (isize, isize, isize),
) -> f64 {
    let (x0, x1) = axis_range(nx, ox);
    let (y0, y1) = axis_range(ny, oy);
    let (z0, z1) = axis_range(nz, oz);
    if x0 >= x1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for z in z0..z1 {
        let zi = (z as isize + oz) as usize;
        for y in y0..y1 {
            let yi = (y as isize + oy) as usize;
            let a_base = x0 + nx * (y + ny * z);
            let b_base = (x0 as isize + ox) as usize + nx * (yi + ny * zi);
            let ra = &a[a_base..a_base + (x1 - x0)];
            let rb = &b[b_base..b_base + (x1 - x0)];
            acc += ra.iter().zip(rb).map(|(u, v)| u * v).sum::<f64>();
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_tensor(c: usize, nx: usize, ny: usize, nz: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(c, nx, ny, nz);
        for v in t.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        t
    }

    fn random_layer(in_c: usize, out_c: usize, seed: u64) -> ConvLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = ConvLayer::zeros("test", in_c, out_c, (3, 3, 3)).unwrap();
        for w in l.w.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        for b in l.b.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        l
    }

    /// Direct definition: out[co](p) = b[co] + sum_ci sum_d w*in[ci](p+d-c).
    fn reference_forward(layer: &ConvLayer, input: &Tensor) -> Tensor {
        let (nx, ny, nz) = (input.nx, input.ny, input.nz);
        let mut out = Tensor::zeros(layer.out_c, nx, ny, nz);
        let (cx, cy, cz) = (layer.kx / 2, layer.ky / 2, layer.kz / 2);
        for co in 0..layer.out_c {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let mut acc = layer.b[co];
                        for ci in 0..layer.in_c {
                            for dz in 0..layer.kz {
                                for dy in 0..layer.ky {
                                    for dx in 0..layer.kx {
                                        let xi = x as isize + dx as isize - cx as isize;
                                        let yi = y as isize + dy as isize - cy as isize;
                                        let zi = z as isize + dz as isize - cz as isize;
                                        if xi < 0
                                            || yi < 0
                                            || zi < 0
                                            || xi >= nx as isize
                                            || yi >= ny as isize
                                            || zi >= nz as isize
                                        {
                                            continue;
                                        }
                                        let v = input.channel(ci)
                                            [xi as usize + nx * (yi as usize + ny * zi as usize)];
                                        acc += layer.w[layer.w_idx(co, ci, dx, dy, dz)] * v;
                                    }
                                }
                            }
                        }
                        out.channel_mut(co)[x + nx * (y + ny * z)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_kernel_gives_constant_bias() {
        let mut l = ConvLayer::zeros("z", 2, 3, (3, 3, 3)).unwrap();
        l.b = vec![0.5, -1.0, 2.0];
        let input = random_tensor(2, 4, 3, 2, 1);
        let out = l.forward(&input).unwrap();
        for co in 0..3 {
            for v in out.channel(co) {
                assert_eq!(*v, l.b[co]);
            }
        }
    }

    #[test]
    fn center_one_kernel_is_identity() {
        let mut l = ConvLayer::zeros("id", 1, 1, (3, 3, 3)).unwrap();
        let center = l.w_idx(0, 0, 1, 1, 1);
        l.w[center] = 1.0;
        let input = random_tensor(1, 5, 4, 3, 2);
        let out = l.forward(&input).unwrap();
        assert_eq!(out.data, input.data);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let l = ConvLayer::zeros("m", 2, 2, (3, 3, 3)).unwrap();
        let input = random_tensor(3, 4, 4, 4, 3);
        assert!(l.forward(&input).is_err());
        assert!(l.backward_input(&input).is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvLayer::zeros("e", 1, 1, (2, 3, 3)).is_err());
    }

    #[test]
    fn forward_matches_reference_loops() {
        let l = random_layer(2, 3, 4);
        let input = random_tensor(2, 5, 4, 3, 5);
        let fast = l.forward(&input).unwrap();
        let slow = reference_forward(&l, &input);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // L = sum(forward(input) .* probe); analytic grads via backward paths
        let l = random_layer(2, 3, 6);
        let input = random_tensor(2, 5, 4, 3, 7);
        let probe = random_tensor(3, 5, 4, 3, 8);
        let loss = |layer: &ConvLayer, inp: &Tensor| -> f64 {
            layer
                .forward(inp)
                .unwrap()
                .data
                .iter()
                .zip(&probe.data)
                .map(|(a, p)| a * p)
                .sum()
        };
        let g_in = l.backward_input(&probe).unwrap();
        let (gw, gb) = l.grad_params(&input, &probe).unwrap();
        let eps = 1e-5;
        let rel = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);

        for i in (0..input.data.len()).step_by(7) {
            let mut p = input.clone();
            p.data[i] += eps;
            let mut m = input.clone();
            m.data[i] -= eps;
            let numeric = (loss(&l, &p) - loss(&l, &m)) / (2.0 * eps);
            assert!(rel(numeric, g_in.data[i]) < 1e-4, "input grad {i}");
        }
        for i in (0..l.w.len()).step_by(5) {
            let mut p = l.clone();
            p.w[i] += eps;
            let mut m = l.clone();
            m.w[i] -= eps;
            let numeric = (loss(&p, &input) - loss(&m, &input)) / (2.0 * eps);
            assert!(rel(numeric, gw[i]) < 1e-4, "weight grad {i}");
        }
        for i in 0..l.b.len() {
            let mut p = l.clone();
            p.b[i] += eps;
            let mut m = l.clone();
            m.b[i] -= eps;
            let numeric = (loss(&p, &input) - loss(&m, &input)) / (2.0 * eps);
            assert!(rel(numeric, gb[i]) < 1e-4, "bias grad {i}");
        }
    }

    #[test]
    fn he_init_statistics_and_determinism() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = ConvLayer::he_init("h", 8, 8, (3, 3, 3), &mut r1).unwrap();
        let b = ConvLayer::he_init("h", 8, 8, (3, 3, 3), &mut r2).unwrap();
        assert_eq!(a.w, b.w);
        assert!(a.b.iter().all(|&x| x == 0.0));
        let n = a.w.len() as f64;
        let mean = a.w.iter().sum::<f64>() / n;
        let var = a.w.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
        let expect = 2.0 / (8.0 * 27.0);
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - expect).abs() < 0.3 * expect, "var {var} vs {expect}");
    }

    #[test]
    fn works_on_degenerate_spatial_dims() {
        let l = random_layer(1, 1, 9);
        let input = random_tensor(1, 1, 1, 1, 10);
        let out = l.forward(&input).unwrap();
        let expect = l.b[0] + l.w[l.w_idx(0, 0, 1, 1, 1)] * input.data[0];
        assert!((out.data[0] - expect).abs() < 1e-12);
    }
}
