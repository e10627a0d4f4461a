use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for every parameter of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.eps > 0.0) {
            return Err(Error::InvalidSpec("learning rate and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::InvalidSpec("Adam betas must lie in [0, 1)".into()));
        }
        Ok(Self { config, step: 0, m: Gradients::zeros_like(model), v: Gradients::zeros_like(model) })
    }

    /// One bias-corrected Adam update followed by clamping every bias to be
    /// non-positive. Non-finite gradients leave the model untouched.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        if grads.weights.len() != model.layers().len() {
            return Err(Error::ShapeMismatch("gradient layer count".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let lr = T::from_f64(c.learning_rate);
        let (bc1, bc2, eps) = (T::from_f64(bc1), T::from_f64(bc2), T::from_f64(c.eps));

        for (li, layer) in model.layers_mut().iter_mut().enumerate() {
            let pairs: [(&mut Vec<T>, usize); 2] = [(&mut layer.weights, 0), (&mut layer.biases, 1)];
            for (params, which) in pairs {
                let (g, m, v) = if which == 0 {
                    (&grads.weights[li], &mut self.m.weights[li], &mut self.v.weights[li])
                } else {
                    (&grads.biases[li], &mut self.m.biases[li], &mut self.v.biases[li])
                };
                if g.len() != params.len() {
                    return Err(Error::ShapeMismatch("gradient parameter count".into()));
                }
                for i in 0..params.len() {
                    m[i] = b1 * m[i] + ob1 * g[i];
                    v[i] = b2 * v[i] + ob2 * g[i] * g[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        clamp_biases(model);
        Ok(())
    }
}

/// Sets every bias to `min(bias, 0)`.
pub fn clamp_biases<T: Real>(model: &mut Model<T>) {
    for layer in model.layers_mut() {
        for b in &mut layer.biases {
            if *b > T::zero() {
                *b = T::zero();
            }
        }
    }
}

/// All parameters in layer order, weights before biases.
pub fn flat_params<T: Real>(model: &Model<T>) -> Vec<T> {
    let mut out = vec![];
    for l in model.layers() {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.biases);
    }
    out
}
