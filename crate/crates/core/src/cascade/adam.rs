//! Adam optimizer with bias correction.

use crate::cascade::model::{CascadeModel, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(model: &CascadeModel) -> Self {
        let shape: Vec<(Vec<f64>, Vec<f64>)> = model
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        AdamState {
            t: 0,
            m: shape.clone(),
            v: shape,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::arg(format!("{} = {} outside [0, 1)", name, b)));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::arg("epsilon must be positive".to_string()));
        }
        Ok(())
    }
}

/// One Adam update over every model parameter. Rejects non-finite gradients
/// with the offending layer named.
pub fn adam_step(
    model: &mut CascadeModel,
    grads: &Gradients,
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<()> {
    params.validate()?;
    if grads.layers.len() != model.layers.len() {
        return Err(Error::dim("gradient/model layer count mismatch".to_string()));
    }
    for (layer, (gw, gb)) in model.layers.iter().zip(&grads.layers) {
        if gw.len() != layer.w.len() || gb.len() != layer.b.len() {
            return Err(Error::dim(format!("gradient shape mismatch in {}", layer.name)));
        }
        if gw.iter().chain(gb.iter()).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "non-finite gradient in layer {}",
                layer.name
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);

    for (li, layer) in model.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[li];
        let (mw, mb) = &mut state.m[li];
        let (vw, vb) = &mut state.v[li];
        update_slice(&mut layer.w, gw, mw, vw, params, c1, c2);
        update_slice(&mut layer.b, gb, mb, vb, params, c1, c2);
    }
    Ok(())
}

fn update_slice(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    p: &AdamParams,
    c1: f64,
    c2: f64,
) {
    for i in 0..w.len() {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::model::CascadeConfig;

    fn tiny_model() -> CascadeModel {
        CascadeModel::init(
            CascadeConfig {
                n_blocks: 1,
                convs_per_block: 1,
                features: 2,
                kernel: (3, 3, 3),
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_weights_unchanged() {
        let mut model = tiny_model();
        let before = model.clone();
        let grads = Gradients::zeros_like(&model);
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &grads, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(model, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let mut model = tiny_model();
        let before = model.clone();
        let mut grads = Gradients::zeros_like(&model);
        for (gw, _) in grads.layers.iter_mut() {
            gw.fill(0.37);
        }
        let mut state = AdamState::new(&model);
        let p = AdamParams::default();
        adam_step(&mut model, &grads, &mut state, &p).unwrap();
        for (layer, old) in model.layers.iter().zip(&before.layers) {
            for (w, w0) in layer.w.iter().zip(&old.w) {
                let delta = w0 - w; // positive gradient pushes weights down
                assert!((delta - p.learning_rate).abs() < 1e-6, "delta {delta}");
            }
        }
    }

    #[test]
    fn quadratic_objective_decreases() {
        // minimize f(w) = (w - 3)^2 on a single stand-in parameter
        let mut model = tiny_model();
        model.layers[0].w.fill(0.0);
        let w_of = |m: &CascadeModel| m.layers[0].w[0];
        let mut state = AdamState::new(&model);
        let p = AdamParams {
            learning_rate: 1e-2,
            ..AdamParams::default()
        };
        let mut f_prev = (w_of(&model) - 3.0f64).powi(2);
        for _ in 0..3 {
            let mut grads = Gradients::zeros_like(&model);
            let g = 2.0 * (w_of(&model) - 3.0);
            for (gw, _) in grads.layers.iter_mut() {
                gw[0] = g;
            }
            adam_step(&mut model, &grads, &mut state, &p).unwrap();
            let f = (w_of(&model) - 3.0f64).powi(2);
            assert!(f < f_prev, "objective rose: {f} >= {f_prev}");
            f_prev = f;
        }
    }

    #[test]
    fn non_finite_gradient_rejected_with_layer_name() {
        let mut model = tiny_model();
        let mut grads = Gradients::zeros_like(&model);
        grads.layers[0].0[5] = f64::NAN;
        let mut state = AdamState::new(&model);
        let err = adam_step(&mut model, &grads, &mut state, &AdamParams::default()).unwrap_err();
        assert!(err.to_string().contains("block0.conv0"), "{err}");
        assert_eq!(state.step_count(), 0, "failed step must not advance time");
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let mut model = tiny_model();
        let grads = Gradients::zeros_like(&model);
        let mut state = AdamState::new(&model);
        for p in [
            AdamParams { learning_rate: 0.0, ..AdamParams::default() },
            AdamParams { beta1: 1.0, ..AdamParams::default() },
            AdamParams { beta2: -0.1, ..AdamParams::default() },
        ] {
            assert!(adam_step(&mut model, &grads, &mut state, &p).is_err());
        }
    }
}
