use serde::{Deserialize, Serialize};

use crate::denoiser::{ModelParams, CAMERA_PREFIX};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments and update counts per parameter tensor, in `ModelParams::named`
/// order. Counts are per tensor so a tensor unfrozen late starts its bias
/// correction from one.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub names: Vec<String>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ModelParams, config: AdamConfig) -> Self {
        let named = params.named();
        AdamState {
            config,
            names: named.iter().map(|(n, _)| n.clone()).collect(),
            m: named.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            v: named.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            steps: vec![0; named.len()],
        }
    }
}

/// Which parameter tensors an update may touch, in `ModelParams::named` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    pub trainable: Vec<bool>,
}

impl FreezeMask {
    pub fn from_fn(params: &ModelParams, f: impl Fn(&str) -> bool) -> Self {
        FreezeMask {
            trainable: params.named().iter().map(|(n, _)| f(n)).collect(),
        }
    }

    pub fn all(params: &ModelParams) -> Self {
        Self::from_fn(params, |_| true)
    }

    pub fn camera_only(params: &ModelParams) -> Self {
        Self::from_fn(params, |n| n.starts_with(CAMERA_PREFIX))
    }

    pub fn backbone_only(params: &ModelParams) -> Self {
        Self::from_fn(params, |n| !n.starts_with(CAMERA_PREFIX))
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.iter().filter(|&&t| t).count()
    }
}

/// One bias-corrected Adam update of the trainable tensors.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    mask: &FreezeMask,
) -> Result<()> {
    let g = grads.named();
    let mut p = params.named_mut();
    let n = p.len();
    if g.len() != n || state.names.len() != n || mask.trainable.len() != n {
        return Err(Error::shape(&[n], &[g.len(), state.names.len(), mask.trainable.len()]));
    }
    for (i, ((pn, pt), (gn, gt))) in p.iter().zip(&g).enumerate() {
        if pn != gn || *pn != state.names[i] {
            return Err(Error::ConfigMismatch(format!("parameter {pn} vs gradient {gn}")));
        }
        pt.same_shape(gt)?;
        state.m[i].same_shape(gt)?;
        if mask.trainable[i] && !gt.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {gn}")));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    for (i, (_, pt)) in p.iter_mut().enumerate() {
        if !mask.trainable[i] {
            continue;
        }
        state.steps[i] += 1;
        let k = state.steps[i] as i32;
        let c1 = 1.0 - beta1.powi(k);
        let c2 = 1.0 - beta2.powi(k);
        let gd = g[i].1.data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in pt.data_mut().iter_mut().enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gd[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * gd[j] * gd[j];
            *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(())
}
