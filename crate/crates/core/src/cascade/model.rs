//! Cascaded CNN with hard data-consistency layers.
//!
//! Per block: x <- dc( x + CNN(x) ), where the CNN works on the 2-channel
//! real/imag representation and the DC layer replaces sampled k-space bins
//! with the measured values. The forward pass can record a tape (the input
//! of every convolution) from which `cascade_backward` reproduces exact
//! reverse-mode parameter gradients; the DC layer is self-adjoint as a
//! real-linear map, so its backward pass reuses the forward masking.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cascade::conv::ConvLayer;
use crate::cascade::tensor::Tensor;
use crate::error::{Error, Result};
use crate::fourier::{fft3_centered, ifft3_centered};
use crate::sampling::SamplingMask;
use crate::volume::{ComplexVolume, Domain};

pub const CNET_MAGIC: &[u8; 6] = b"CNET1\0";
pub const CNET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CascadeConfig {
    pub n_blocks: usize,
    pub convs_per_block: usize,
    pub features: usize,
    pub kernel: (usize, usize, usize),
}

impl CascadeConfig {
    /// Small configuration used throughout the tests: 2 blocks of 3
    /// convolutions at 8 features.
    pub fn desk_default() -> Self {
        CascadeConfig {
            n_blocks: 2,
            convs_per_block: 3,
            features: 8,
            kernel: (3, 3, 3),
        }
    }

    /// Full-scale configuration: 5 blocks of 5 convolutions at 48 features.
    pub fn full_scale() -> Self {
        CascadeConfig {
            n_blocks: 5,
            convs_per_block: 5,
            features: 48,
            kernel: (3, 3, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.convs_per_block == 0 || self.features == 0 {
            return Err(Error::arg("cascade config counts must be positive".to_string()));
        }
        let (kx, ky, kz) = self.kernel;
        if kx % 2 == 0 || ky % 2 == 0 || kz % 2 == 0 || kx == 0 || ky == 0 || kz == 0 {
            return Err(Error::arg(format!(
                "kernel extents must be odd and positive, got {}x{}x{}",
                kx, ky, kz
            )));
        }
        Ok(())
    }

    /// (in, out) channel counts for each convolution inside a block: 2 in,
    /// `features` between, 2 out.
    pub fn block_channels(&self) -> Vec<(usize, usize)> {
        let m = self.convs_per_block;
        (0..m)
            .map(|j| {
                let cin = if j == 0 { 2 } else { self.features };
                let cout = if j == m - 1 { 2 } else { self.features };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub config: CascadeConfig,
    /// Flattened layers: index = block * convs_per_block + conv.
    pub layers: Vec<ConvLayer>,
    pub version: u32,
}

impl CascadeModel {
    /// He-initialised kernels, zero biases; deterministic per seed.
    pub fn init(config: CascadeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for b in 0..config.n_blocks {
            for (j, (cin, cout)) in config.block_channels().into_iter().enumerate() {
                layers.push(ConvLayer::he_init(
                    format!("block{}.conv{}", b, j),
                    cin,
                    cout,
                    config.kernel,
                    &mut rng,
                )?);
            }
        }
        Ok(CascadeModel {
            config,
            layers,
            version: CNET_VERSION,
        })
    }

    /// All weights and biases zero; the cascade then reduces to the
    /// zero-filled reconstruction.
    pub fn zero_weights(config: CascadeConfig) -> Result<Self> {
        let mut model = CascadeModel::init(config, 0)?;
        for layer in model.layers.iter_mut() {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        Ok(model)
    }

    pub fn block_layers(&self, b: usize) -> &[ConvLayer] {
        let m = self.config.convs_per_block;
        &self.layers[b * m..(b + 1) * m]
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.n_parameters()).sum()
    }
}

/// Hard data consistency: replace sampled k-space bins of `x_cnn` with the
/// measured values. output = ifft( (1-m)*fft(x_cnn) + m*k_meas ).
pub fn dc_layer(
    x_cnn: &ComplexVolume,
    k_meas: &ComplexVolume,
    mask: &SamplingMask,
) -> Result<ComplexVolume> {
    let dims = x_cnn.dims();
    if k_meas.dims() != dims {
        return Err(Error::dim(format!(
            "dc inputs disagree: image {} vs k-space {}",
            dims,
            k_meas.dims()
        )));
    }
    if dims.ny != mask.ny() || dims.nz != mask.nz() {
        return Err(Error::dim(format!(
            "mask plane {}x{} does not match volume {}",
            mask.ny(),
            mask.nz(),
            dims
        )));
    }
    let ones = mask.popcount();
    if ones == mask.plane_len() {
        return ifft3_centered(k_meas); // full replacement
    }
    if ones == 0 {
        return Ok(x_cnn.clone()); // nothing to replace
    }
    let k_cnn = fft3_centered(x_cnn)?;
    let mut combined = k_cnn.data().to_vec();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            if mask.bit(y, z) {
                let base = dims.idx(0, y, z);
                combined[base..base + dims.nx]
                    .copy_from_slice(&k_meas.data()[dims.idx(0, y, z)..dims.idx(0, y, z) + dims.nx]);
            }
        }
    }
    ifft3_centered(&ComplexVolume::from_computed(dims, Domain::Kspace, combined))
}

/// Adjoint of the DC layer w.r.t. its image input: the measured term is
/// constant, so the gradient passes through ifft o (1-m) o fft.
fn dc_layer_adjoint(upstream: &ComplexVolume, mask: &SamplingMask) -> Result<ComplexVolume> {
    let dims = upstream.dims();
    let ones = mask.popcount();
    if ones == mask.plane_len() {
        return Ok(ComplexVolume::zeros(dims, Domain::Image));
    }
    if ones == 0 {
        return Ok(upstream.clone());
    }
    let k = fft3_centered(upstream)?;
    let mut kept = k.data().to_vec();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            if mask.bit(y, z) {
                let base = dims.idx(0, y, z);
                kept[base..base + dims.nx].fill(Complex64::new(0.0, 0.0));
            }
        }
    }
    ifft3_centered(&ComplexVolume::from_computed(dims, Domain::Kspace, kept))
}

/// Recorded activations for one block: the input tensor of every conv layer.
/// `conv_inputs[j+1]` doubles as the ReLU output of conv `j`, which is all
/// the backward pass needs.
struct BlockTape {
    conv_inputs: Vec<Tensor>,
}

pub struct Tape {
    blocks: Vec<BlockTape>,
}

/// Per-layer parameter gradients, same ordering as `CascadeModel::layers`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &CascadeModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, o) in w.iter_mut().zip(ow) {
                *a += scale * o;
            }
            for (a, o) in b.iter_mut().zip(ob) {
                *a += scale * o;
            }
        }
    }
}

fn run_block(
    layers: &[ConvLayer],
    x: &ComplexVolume,
    record: bool,
) -> Result<(Tensor, Option<BlockTape>)> {
    let mut h = Tensor::from_complex(x);
    let mut inputs = Vec::new();
    let last = layers.len() - 1;
    for (j, layer) in layers.iter().enumerate() {
        if record {
            inputs.push(h.clone());
        }
        let u = layer.forward(&h)?;
        h = if j < last { crate::cascade::tensor::relu(&u) } else { u };
    }
    Ok((h, record.then_some(BlockTape { conv_inputs: inputs })))
}

fn cascade_run(
    model: &CascadeModel,
    k_meas: &ComplexVolume,
    mask: &SamplingMask,
    record: bool,
) -> Result<(ComplexVolume, Option<Tape>)> {
    if k_meas.domain() != Domain::Kspace {
        return Err(Error::arg("cascade expects k-space input".to_string()));
    }
    let mut x = ifft3_centered(k_meas)?;
    let mut blocks = Vec::new();
    for b in 0..model.config.n_blocks {
        let (residual, tape) = run_block(model.block_layers(b), &x, record)?;
        if let Some(t) = tape {
            blocks.push(t);
        }
        let r = residual.to_complex(Domain::Image)?;
        let dims = x.dims();
        let summed: Vec<Complex64> = x.data().iter().zip(r.data()).map(|(a, b)| a + b).collect();
        let x_dc_in = ComplexVolume::from_computed(dims, Domain::Image, summed);
        x = dc_layer(&x_dc_in, k_meas, mask)?;
    }
    Ok((x, record.then_some(Tape { blocks })))
}

/// Reconstruct an image from masked k-space.
pub fn cascade_forward(
    model: &CascadeModel,
    k_meas: &ComplexVolume,
    mask: &SamplingMask,
) -> Result<ComplexVolume> {
    Ok(cascade_run(model, k_meas, mask, false)?.0)
}

/// Forward pass that also records the tape needed for `cascade_backward`.
pub fn cascade_forward_tape(
    model: &CascadeModel,
    k_meas: &ComplexVolume,
    mask: &SamplingMask,
) -> Result<(ComplexVolume, Tape)> {
    let (x, tape) = cascade_run(model, k_meas, mask, true)?;
    Ok((x, tape.expect("tape recorded")))
}

/// Reverse-mode parameter gradients given the gradient of the loss w.r.t.
/// the final image (as a 2-channel tensor).
pub fn cascade_backward(
    model: &CascadeModel,
    tape: &Tape,
    output_grad: &Tensor,
    mask: &SamplingMask,
) -> Result<Gradients> {
    if tape.blocks.len() != model.config.n_blocks {
        return Err(Error::arg("tape does not match model block count".to_string()));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut g = output_grad.to_complex(Domain::Image)?;
    for b in (0..model.config.n_blocks).rev() {
        // through the DC layer
        let g_dcin = dc_layer_adjoint(&g, mask)?;
        // through the conv stack of this block
        let layers = model.block_layers(b);
        let block_tape = &tape.blocks[b];
        let last = layers.len() - 1;
        let mut gt = Tensor::from_complex(&g_dcin);
        for j in (0..layers.len()).rev() {
            if j < last {
                // gt currently holds the gradient at the ReLU output of conv j
                gt = crate::cascade::tensor::relu_backward(&block_tape.conv_inputs[j + 1], &gt);
            }
            let (gw, gb) = layers[j].grad_params(&block_tape.conv_inputs[j], &gt)?;
            let idx = b * model.config.convs_per_block + j;
            for (a, v) in grads.layers[idx].0.iter_mut().zip(&gw) {
                *a += v;
            }
            for (a, v) in grads.layers[idx].1.iter_mut().zip(&gb) {
                *a += v;
            }
            gt = layers[j].backward_input(&gt)?;
        }
        let g_cnn_path = gt.to_complex(Domain::Image)?;
        // block input feeds both the residual sum and the CNN
        let dims = g_dcin.dims();
        let combined: Vec<Complex64> = g_dcin
            .data()
            .iter()
            .zip(g_cnn_path.data())
            .map(|(a, b)| a + b)
            .collect();
        g = ComplexVolume::from_computed(dims, Domain::Image, combined);
    }
    Ok(grads)
}

pub fn save_model(path: impl AsRef<Path>, model: &CascadeModel) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CNET_MAGIC)?;
    for v in [
        model.version,
        model.config.n_blocks as u32,
        model.config.convs_per_block as u32,
        model.config.features as u32,
        model.config.kernel.0 as u32,
        model.config.kernel.1 as u32,
        model.config.kernel.2 as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for layer in &model.layers {
        for v in layer.w.iter().chain(layer.b.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CascadeModel> {
    let path = path.as_ref();
    let ferr = |reason: String| Error::format(path.to_path_buf(), reason);
    let mut r = BufReader::new(crate::io::open_for_read(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| ferr("file too short for header".to_string()))?;
    if &magic != CNET_MAGIC {
        return Err(ferr("bad magic".to_string()));
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| ferr("truncated header".to_string()))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = read_u32(&mut r)?;
    if version != CNET_VERSION {
        return Err(ferr(format!("unsupported version {}", version)));
    }
    let n_blocks = read_u32(&mut r)? as usize;
    let convs_per_block = read_u32(&mut r)? as usize;
    let features = read_u32(&mut r)? as usize;
    let kx = read_u32(&mut r)? as usize;
    let ky = read_u32(&mut r)? as usize;
    let kz = read_u32(&mut r)? as usize;
    let config = CascadeConfig {
        n_blocks,
        convs_per_block,
        features,
        kernel: (kx, ky, kz),
    };
    config.validate().map_err(|e| ferr(e.to_string()))?;

    let mut model = CascadeModel::zero_weights(config)?;
    model.version = version;
    for layer in model.layers.iter_mut() {
        for slot in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| ferr("truncated weights".to_string()))?;
            let v = f64::from_le_bytes(b);
            if !v.is_finite() {
                return Err(ferr("non-finite weight".to_string()));
            }
            *slot = v;
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(ferr("trailing bytes after weights".to_string()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::tensor::mse_loss_with_grad;
    use crate::sampling::poisson_disk_mask;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};

    fn random_kspace(dims: Dims, seed: u64) -> ComplexVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.n())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexVolume::new(dims, Domain::Kspace, data).unwrap()
    }

    fn mask_from_bits(ny: usize, nz: usize, bits: Vec<u8>) -> SamplingMask {
        SamplingMask::from_bits(ny, nz, bits, 1.0, 0).unwrap()
    }

    #[test]
    fn config_channel_plan() {
        let c = CascadeConfig::desk_default();
        assert_eq!(c.block_channels(), vec![(2, 8), (8, 8), (8, 2)]);
        let f = CascadeConfig::full_scale();
        assert_eq!(f.block_channels().len(), 5);
        assert_eq!(f.block_channels()[0], (2, 48));
        assert_eq!(f.block_channels()[4], (48, 2));
    }

    #[test]
    fn dc_full_mask_replaces_everything() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let k = random_kspace(dims, 1);
        let x = ifft3_centered(&random_kspace(dims, 2)).unwrap();
        let m = mask_from_bits(4, 4, vec![1; 16]);
        let out = dc_layer(&x, &k, &m).unwrap();
        let expect = ifft3_centered(&k).unwrap();
        assert_eq!(out.data(), expect.data());
    }

    #[test]
    fn dc_empty_mask_is_identity() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let k = random_kspace(dims, 3);
        let x = ifft3_centered(&random_kspace(dims, 4)).unwrap();
        let m = mask_from_bits(4, 4, vec![0; 16]);
        let out = dc_layer(&x, &k, &m).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn dc_mixed_bins_match_oracle() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let k_meas = random_kspace(dims, 5);
        let x = ifft3_centered(&random_kspace(dims, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bits: Vec<u8> = (0..16).map(|_| rng.random_range(0..2u8)).collect();
        let m = mask_from_bits(4, 4, bits);
        let out = dc_layer(&x, &k_meas, &m).unwrap();

        let k_out = fft3_centered(&out).unwrap();
        let k_x = fft3_centered(&x).unwrap();
        let scale = k_meas.l2_norm().max(k_x.l2_norm());
        for z in 0..4 {
            for y in 0..4 {
                for x_i in 0..4 {
                    let i = dims.idx(x_i, y, z);
                    let expect = if m.bit(y, z) { k_meas.data()[i] } else { k_x.data()[i] };
                    assert!(
                        (k_out.data()[i] - expect).norm() < 1e-10 * scale,
                        "bin ({x_i},{y},{z})"
                    );
                }
            }
        }
    }

    #[test]
    fn dc_dim_mismatch_rejected() {
        let k = random_kspace(Dims::new(4, 4, 4).unwrap(), 1);
        let x = ifft3_centered(&random_kspace(Dims::new(4, 4, 2).unwrap(), 2)).unwrap();
        let m = mask_from_bits(4, 4, vec![1; 16]);
        assert!(dc_layer(&x, &k, &m).is_err());
        let m_bad = mask_from_bits(4, 2, vec![1; 8]);
        let x_ok = ifft3_centered(&random_kspace(Dims::new(4, 4, 4).unwrap(), 3)).unwrap();
        assert!(dc_layer(&x_ok, &k, &m_bad).is_err());
    }

    #[test]
    fn zero_weight_cascade_is_zero_filled() {
        let dims = Dims::new(6, 6, 4).unwrap();
        let model = CascadeModel::zero_weights(CascadeConfig::desk_default()).unwrap();
        let mask = poisson_disk_mask(6, 4, 2.0, (2, 2), 3).unwrap();
        let k_full = random_kspace(dims, 8);
        let k_meas = crate::sampling::apply_mask(&k_full, &mask).unwrap();
        let out = cascade_forward(&model, &k_meas, &mask).unwrap();
        let zf = ifft3_centered(&k_meas).unwrap();
        // residual 0 and DC re-applies measured bins to their own transform
        let scale = zf.l2_norm();
        for (a, b) in out.data().iter().zip(zf.data()) {
            assert!((a - b).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn full_mask_cascade_ignores_weights() {
        let dims = Dims::new(6, 4, 4).unwrap();
        let model = CascadeModel::init(CascadeConfig::desk_default(), 5).unwrap();
        let m = mask_from_bits(4, 4, vec![1; 16]);
        let k = random_kspace(dims, 9);
        let out = cascade_forward(&model, &k, &m).unwrap();
        let zf = ifft3_centered(&k).unwrap();
        assert_eq!(out.data(), zf.data());
    }

    #[test]
    fn hard_dc_exactness_with_random_weights() {
        let dims = Dims::new(8, 6, 4).unwrap();
        let model = CascadeModel::init(CascadeConfig::desk_default(), 11).unwrap();
        let mask = poisson_disk_mask(6, 4, 2.0, (2, 2), 4).unwrap();
        let k_meas = crate::sampling::apply_mask(&random_kspace(dims, 10), &mask).unwrap();
        let out = cascade_forward(&model, &k_meas, &mask).unwrap();
        let k_out = fft3_centered(&out).unwrap();
        let scale = k_meas.l2_norm();
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                if !mask.bit(y, z) {
                    continue;
                }
                for x in 0..dims.nx {
                    let i = dims.idx(x, y, z);
                    assert!(
                        (k_out.data()[i] - k_meas.data()[i]).norm() <= 1e-10 * scale,
                        "sampled bin ({x},{y},{z}) drifted"
                    );
                }
            }
        }
    }

    #[test]
    fn fully_convolutional_across_sizes() {
        let model = CascadeModel::init(CascadeConfig::desk_default(), 2).unwrap();
        for nx in [3, 9, 17] {
            let dims = Dims::new(nx, 6, 4).unwrap();
            let mask = poisson_disk_mask(6, 4, 2.0, (2, 2), 1).unwrap();
            let k = crate::sampling::apply_mask(&random_kspace(dims, nx as u64), &mask).unwrap();
            let out = cascade_forward(&model, &k, &mask).unwrap();
            assert_eq!(out.dims(), dims);
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_loss() {
        let dims = Dims::new(5, 4, 3).unwrap();
        let config = CascadeConfig {
            n_blocks: 2,
            convs_per_block: 2,
            features: 3,
            kernel: (3, 3, 3),
        };
        let model = CascadeModel::init(config, 13).unwrap();
        let mask = poisson_disk_mask(4, 3, 1.5, (2, 1), 2).unwrap();
        let k_meas = crate::sampling::apply_mask(&random_kspace(dims, 14), &mask).unwrap();
        let target = Tensor::from_complex(&ifft3_centered(&random_kspace(dims, 15)).unwrap());

        let loss_of = |m: &CascadeModel| -> f64 {
            let out = cascade_forward(m, &k_meas, &mask).unwrap();
            crate::cascade::tensor::mse_loss(&Tensor::from_complex(&out), &target).unwrap()
        };

        let (out, tape) = cascade_forward_tape(&model, &k_meas, &mask).unwrap();
        let (_, grad_out) = mse_loss_with_grad(&Tensor::from_complex(&out), &target).unwrap();
        let grads = cascade_backward(&model, &tape, &grad_out, &mask).unwrap();

        let eps = 1e-5;
        let rel = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
        let mut worst = 0.0f64;
        for li in 0..model.layers.len() {
            for wi in (0..model.layers[li].w.len()).step_by(11) {
                let mut p = model.clone();
                p.layers[li].w[wi] += eps;
                let mut m = model.clone();
                m.layers[li].w[wi] -= eps;
                let numeric = (loss_of(&p) - loss_of(&m)) / (2.0 * eps);
                worst = worst.max(rel(numeric, grads.layers[li].0[wi]));
            }
            for bi in 0..model.layers[li].b.len() {
                let mut p = model.clone();
                p.layers[li].b[bi] += eps;
                let mut m = model.clone();
                m.layers[li].b[bi] -= eps;
                let numeric = (loss_of(&p) - loss_of(&m)) / (2.0 * eps);
                worst = worst.max(rel(numeric, grads.layers[li].1[bi]));
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cnet");
        let model = CascadeModel::init(CascadeConfig::desk_default(), 21).unwrap();
        save_model(&p, &model).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back, model);

        let p2 = dir.path().join("m2.cnet");
        save_model(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_model_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cnet");
        let model = CascadeModel::init(CascadeConfig::desk_default(), 21).unwrap();
        save_model(&p, &model).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_model(&p).is_err());

        std::fs::write(&p, b"JUNKFILE").unwrap();
        assert!(load_model(&p).is_err());
    }

    #[test]
    fn full_scale_config_constructs_and_runs_small() {
        let model = CascadeModel::init(CascadeConfig::full_scale(), 1).unwrap();
        assert_eq!(model.layers.len(), 25);
        let dims = Dims::new(4, 4, 3).unwrap();
        let mask = poisson_disk_mask(4, 3, 1.5, (2, 1), 1).unwrap();
        let k = crate::sampling::apply_mask(&random_kspace(dims, 3), &mask).unwrap();
        let out = cascade_forward(&model, &k, &mask).unwrap();
        assert_eq!(out.dims(), dims);
    }
}
