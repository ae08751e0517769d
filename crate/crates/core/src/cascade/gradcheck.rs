//! Full-model gradient verification against central finite differences.

use crate::cascade::model::{cascade_backward, cascade_forward, cascade_forward_tape, CascadeModel};
use crate::cascade::tensor::{mse_loss, mse_loss_with_grad, Tensor};
use crate::error::{Error, Result};
use crate::sampling::SamplingMask;
use crate::volume::ComplexVolume;

/// One training sample for checking: masked k-space plus target image.
pub struct GradCheckSample<'a> {
    pub k_meas: &'a ComplexVolume,
    pub mask: &'a SamplingMask,
    pub target: &'a ComplexVolume,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_layer: String,
    /// Index into the worst layer's kernel vector, or its bias vector when
    /// `worst_is_bias` is set.
    pub worst_index: usize,
    pub worst_is_bias: bool,
    pub checked: usize,
}

fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6)
}

fn param_mut(m: &mut CascadeModel, li: usize, is_bias: bool, idx: usize) -> &mut f64 {
    if is_bias {
        &mut m.layers[li].b[idx]
    } else {
        &mut m.layers[li].w[idx]
    }
}

/// Compare analytic parameter gradients of loss = MSE(cascade(k), target)
/// against central finite differences over every parameter. Meant for small
/// volumes (<= 6 voxels per axis) where the O(params * forward) cost stays
/// reasonable.
pub fn grad_check(
    model: &CascadeModel,
    sample: &GradCheckSample,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::arg(format!("eps {} must be positive", eps)));
    }
    let dims = sample.k_meas.dims();
    if dims.nx > 6 || dims.ny > 6 || dims.nz > 6 {
        return Err(Error::arg(format!(
            "gradient check volumes must be at most 6 per axis, got {}",
            dims
        )));
    }
    let target_t = Tensor::from_complex(sample.target);
    let loss_of = |m: &CascadeModel| -> Result<f64> {
        let out = cascade_forward(m, sample.k_meas, sample.mask)?;
        mse_loss(&Tensor::from_complex(&out), &target_t)
    };

    let (out, tape) = cascade_forward_tape(model, sample.k_meas, sample.mask)?;
    let (_, grad_out) = mse_loss_with_grad(&Tensor::from_complex(&out), &target_t)?;
    let analytic = cascade_backward(model, &tape, &grad_out, sample.mask)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_layer: String::new(),
        worst_index: 0,
        worst_is_bias: false,
        checked: 0,
    };
    let mut work = model.clone();
    for li in 0..model.layers.len() {
        let n_w = model.layers[li].w.len();
        let n_b = model.layers[li].b.len();
        for pi in 0..n_w + n_b {
            let is_bias = pi >= n_w;
            let idx = if is_bias { pi - n_w } else { pi };
            let original = *param_mut(&mut work, li, is_bias, idx);
            *param_mut(&mut work, li, is_bias, idx) = original + eps;
            let lp = loss_of(&work)?;
            *param_mut(&mut work, li, is_bias, idx) = original - eps;
            let lm = loss_of(&work)?;
            *param_mut(&mut work, li, is_bias, idx) = original;
            let numeric = (lp - lm) / (2.0 * eps);
            let ana = if is_bias {
                analytic.layers[li].1[idx]
            } else {
                analytic.layers[li].0[idx]
            };
            let e = rel_err(numeric, ana);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_layer = model.layers[li].name.clone();
                report.worst_index = idx;
                report.worst_is_bias = is_bias;
            }
        }
    }
    Ok(report)
}
