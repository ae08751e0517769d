//! Single-threaded deterministic trainer.
//!
//! Each step samples one (fa, echo, coil) ground-truth volume uniformly from
//! the pooled datasets, crops the readout axis at a random offset, regenerates
//! masked k-space from the cropped image, runs the cascade, and applies one
//! Adam update from the MSE gradient. One "epoch" counts as many steps as
//! there are volumes in the pool.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::adam::{adam_step, AdamParams, AdamState};
use crate::cascade::model::{
    cascade_backward, cascade_forward_tape, CascadeConfig, CascadeModel, Gradients,
};
use crate::cascade::tensor::{mse_loss_with_grad, Tensor};
use crate::error::{Error, Result};
use crate::fourier::fft3_centered;
use crate::phantom::ScanDataset;
use crate::sampling::{apply_mask, SamplingMask};
use crate::volume::{crop_readout, ComplexVolume};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Readout crop length; `None` (or the full readout length) trains on
    /// uncropped volumes.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 4,
            batch: 1,
            crop: Some(32),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam_params(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam_params().validate()?;
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be positive".to_string()));
        }
        if self.batch == 0 {
            return Err(Error::arg("batch size must be positive".to_string()));
        }
        if self.crop == Some(0) {
            return Err(Error::arg("crop length must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

/// Train a fresh cascade on the pooled datasets. Every dataset must carry a
/// sampling mask. Returns the model and the per-step loss log.
pub fn train(
    datasets: &[ScanDataset],
    cascade_config: CascadeConfig,
    config: &TrainConfig,
) -> Result<(CascadeModel, Vec<TrainLogEntry>)> {
    config.validate()?;
    cascade_config.validate()?;
    if datasets.is_empty() {
        return Err(Error::MissingInput("no training datasets given".to_string()));
    }
    let mut samples: Vec<(&ComplexVolume, &SamplingMask)> = Vec::new();
    for (di, ds) in datasets.iter().enumerate() {
        let mask = ds.mask.as_ref().ok_or_else(|| {
            Error::MissingInput(format!("training dataset {} has no sampling mask", di))
        })?;
        for vol in ds.ground_truth.values() {
            samples.push((vol, mask));
        }
    }
    if samples.is_empty() {
        return Err(Error::MissingInput("training datasets hold no volumes".to_string()));
    }
    if let Some(crop) = config.crop {
        for (vol, _) in &samples {
            if crop > vol.dims().nx {
                return Err(Error::arg(format!(
                    "crop length {} exceeds readout length {}",
                    crop,
                    vol.dims().nx
                )));
            }
        }
    }

    let mut model = CascadeModel::init(cascade_config, config.seed)?;
    let mut state = AdamState::new(&model);
    let adam = config.adam_params();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let steps = config.epochs * samples.len();
    let start = Instant::now();
    let mut log = Vec::with_capacity(steps);

    for step in 0..steps {
        let mut grads = Gradients::zeros_like(&model);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch {
            let (gt, mask) = samples[rng.random_range(0..samples.len())];
            let nx = gt.dims().nx;
            let crop = config.crop.unwrap_or(nx);
            let gt_crop = if crop < nx {
                let start_x = rng.random_range(0..=nx - crop);
                crop_readout(gt, start_x, crop)?
            } else {
                gt.clone()
            };
            let k_full = fft3_centered(&gt_crop)?;
            let k_meas = apply_mask(&k_full, mask)?;
            let (out, tape) = cascade_forward_tape(&model, &k_meas, mask)?;
            let (loss, grad_out) =
                mse_loss_with_grad(&Tensor::from_complex(&out), &Tensor::from_complex(&gt_crop))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at step {} (loss = {})",
                    step, loss
                )));
            }
            batch_loss += loss / config.batch as f64;
            let sample_grads = cascade_backward(&model, &tape, &grad_out, mask)?;
            grads.accumulate(&sample_grads, 1.0 / config.batch as f64);
        }
        adam_step(&mut model, &grads, &mut state, &adam)?;
        log.push(TrainLogEntry {
            step,
            loss: batch_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((model, log))
}
