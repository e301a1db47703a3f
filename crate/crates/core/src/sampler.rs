//! Video generation: integrate the learned velocity field from Gaussian noise
//! at `t = 1` to a clean video at `t = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{plucker_embedding, CameraPose, PluckerGrid};
use crate::denoiser::{forward, from_model_space, to_model_space, DenoiserConfig, DenoiserInput, ModelParams};
use crate::error::{Error, Result};
use crate::flow::{integrate_ode, ExpertSplit, Solver, Timestep, VelocityField};
use crate::tensor::{Frame, VideoTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub solver: Solver,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 20,
            solver: Solver::Euler,
            seed: 0,
        }
    }
}

/// A single velocity network or a high/low-noise pair.
#[derive(Clone, Debug)]
pub enum VelocityModel {
    Single(ModelParams),
    Experts {
        low: ModelParams,
        high: ModelParams,
        split: ExpertSplit,
    },
}

impl VelocityModel {
    pub fn config(&self) -> &DenoiserConfig {
        match self {
            VelocityModel::Single(p) => &p.config,
            VelocityModel::Experts { low, .. } => &low.config,
        }
    }

    pub fn params_for(&self, t: Timestep) -> &ModelParams {
        match self {
            VelocityModel::Single(p) => p,
            VelocityModel::Experts { low, high, split } => match split.expert_for(t) {
                crate::flow::Expert::High => high,
                _ => low,
            },
        }
    }

    pub fn has_camera(&self) -> bool {
        match self {
            VelocityModel::Single(p) => p.camera.is_some(),
            VelocityModel::Experts { low, high, .. } => low.camera.is_some() && high.camera.is_some(),
        }
    }
}

/// The model's velocity field with fixed conditioning.
pub struct ConditionedField<'a> {
    pub model: &'a VelocityModel,
    pub references: &'a VideoTensor,
    pub cameras: Option<&'a [PluckerGrid]>,
}

impl VelocityField for ConditionedField<'_> {
    fn velocity(&self, x: &VideoTensor, t: Timestep) -> Result<VideoTensor> {
        let params = self.model.params_for(t);
        let cameras = if params.camera.is_some() { self.cameras } else { None };
        forward(params, &DenoiserInput { x_t: x, t, cameras, references: self.references })
    }
}

pub fn plucker_grids(cameras: &[CameraPose]) -> Result<Vec<PluckerGrid>> {
    cameras.iter().map(plucker_embedding).collect()
}

/// Generates `frames` frames from 1–4 reference images, optionally under a
/// per-frame camera trajectory. Output pixels are clamped to `[0, 1]`.
pub fn generate(
    model: &VelocityModel,
    references: &[Frame],
    cameras: Option<&[CameraPose]>,
    frames: usize,
    sampler: &SamplerConfig,
) -> Result<VideoTensor> {
    let first = references.first().ok_or_else(|| Error::InvalidArgument("at least one reference image".into()))?;
    if references.len() > crate::denoiser::MAX_REFERENCES {
        return Err(Error::TooManyReferences { count: references.len() });
    }
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = references.iter().find(|f| (f.height(), f.width()) != (h, w)) {
        return Err(Error::BadImage(format!(
            "reference images differ in size: {}x{} vs {}x{}",
            bad.height(),
            bad.width(),
            h,
            w
        )));
    }
    let grids = match cameras {
        Some(c) if c.len() != frames => return Err(Error::shape(&[frames], &[c.len()])),
        Some(c) => Some(plucker_grids(c)?),
        None => None,
    };
    let refs = to_model_space(&VideoTensor::from_frames(references)?);
    let field = ConditionedField { model, references: &refs, cameras: grids.as_deref() };
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let x1 = VideoTensor::randn([frames, h, w, model.config().channels], &mut rng);
    let x0 = integrate_ode(&field, &x1, sampler.steps, sampler.solver)?;
    Ok(from_model_space(&x0).map(|v| v.clamp(0.0, 1.0)))
}
