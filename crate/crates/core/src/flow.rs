//! Linear-path flow matching: interpolation, velocity targets, the loss,
//! timestep sampling per expert, and ODE sampling from noise to data.
//!
//! Time runs from `t = 0` (data) to `t = 1` (noise):
//! `x_t = (1 - t) x0 + t x1` and the velocity is `x1 - x0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Timestep(f64);

impl Timestep {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("timestep {t} outside [0, 1]")));
        }
        Ok(Timestep(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expert {
    Low,
    High,
    Any,
}

/// Timestep boundary between the low-noise and high-noise experts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSplit {
    pub boundary: f64,
}

impl Default for ExpertSplit {
    fn default() -> Self {
        ExpertSplit { boundary: 0.9 }
    }
}

impl ExpertSplit {
    pub fn new(boundary: f64) -> Result<Self> {
        let split = ExpertSplit { boundary };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.boundary > 0.0 && self.boundary < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "expert boundary {} outside (0, 1)",
                self.boundary
            )));
        }
        Ok(())
    }

    pub fn expert_for(&self, t: Timestep) -> Expert {
        if t.0 >= self.boundary {
            Expert::High
        } else {
            Expert::Low
        }
    }
}

pub fn interpolate(x0: &VideoTensor, x1: &VideoTensor, t: Timestep) -> Result<VideoTensor> {
    x0.same_shape(x1)?;
    let t = t.0;
    // Written so that both endpoints are reproduced exactly.
    Ok(if t == 0.0 {
        x0.clone()
    } else if t == 1.0 {
        x1.clone()
    } else {
        let data = x0
            .data()
            .iter()
            .zip(x1.data())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        VideoTensor::from_vec(x0.dims(), data)?
    })
}

pub fn velocity_target(x0: &VideoTensor, x1: &VideoTensor) -> Result<VideoTensor> {
    x0.same_shape(x1)?;
    let data = x0.data().iter().zip(x1.data()).map(|(a, b)| b - a).collect();
    VideoTensor::from_vec(x0.dims(), data)
}

fn check_mask(v: &VideoTensor, mask: Option<&[bool]>) -> Result<usize> {
    match mask {
        None => Ok(v.data().len()),
        Some(m) => {
            if m.len() != v.frames() {
                return Err(Error::shape(&[v.frames()], &[m.len()]));
            }
            let frames = m.iter().filter(|&&b| b).count();
            if frames == 0 {
                return Err(Error::EmptyMask);
            }
            Ok(frames * v.frame_len())
        }
    }
}

/// Mean squared error over the frames selected by `mask` (all frames when
/// `None`). The mask has one entry per frame.
pub fn fm_loss(v_pred: &VideoTensor, v_target: &VideoTensor, mask: Option<&[bool]>) -> Result<f64> {
    v_pred.same_shape(v_target)?;
    let count = check_mask(v_pred, mask)?;
    let mut sum = 0.0;
    for f in 0..v_pred.frames() {
        if mask.map_or(true, |m| m[f]) {
            sum += v_pred
                .frame(f)
                .iter()
                .zip(v_target.frame(f))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    Ok(sum / count as f64)
}

/// Loss value and its gradient with respect to `v_pred`; masked frames get
/// exactly zero gradient.
pub fn fm_loss_with_grad(
    v_pred: &VideoTensor,
    v_target: &VideoTensor,
    mask: Option<&[bool]>,
) -> Result<(f64, VideoTensor)> {
    let loss = fm_loss(v_pred, v_target, mask)?;
    let count = check_mask(v_pred, mask)? as f64;
    let mut grad = VideoTensor::zeros(v_pred.frames(), v_pred.height(), v_pred.width(), v_pred.channels());
    for f in 0..v_pred.frames() {
        if mask.map_or(true, |m| m[f]) {
            let (p, q) = (v_pred.frame(f), v_target.frame(f));
            for (g, (a, b)) in grad.frame_mut(f).iter_mut().zip(p.iter().zip(q)) {
                *g = 2.0 * (a - b) / count;
            }
        }
    }
    Ok((loss, grad))
}

pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, expert: Expert, split: &ExpertSplit) -> Result<Timestep> {
    split.validate()?;
    let tau = split.boundary;
    let t = match expert {
        Expert::Low => rng.gen_range(0.0..tau),
        Expert::High => rng.gen_range(tau..=1.0),
        Expert::Any => rng.gen_range(0.0..=1.0),
    };
    Ok(Timestep(t))
}

/// A velocity field `v(x, t)`; conditioning is captured by the implementor.
pub trait VelocityField {
    fn velocity(&self, x: &VideoTensor, t: Timestep) -> Result<VideoTensor>;
}

impl<F> VelocityField for F
where
    F: Fn(&VideoTensor, Timestep) -> Result<VideoTensor>,
{
    fn velocity(&self, x: &VideoTensor, t: Timestep) -> Result<VideoTensor> {
        self(x, t)
    }
}

/// Routes `t >= boundary` to the high-noise expert and the rest to the low-noise one.
pub struct TwoExpertField<'a> {
    pub low: &'a dyn VelocityField,
    pub high: &'a dyn VelocityField,
    pub split: ExpertSplit,
}

impl VelocityField for TwoExpertField<'_> {
    fn velocity(&self, x: &VideoTensor, t: Timestep) -> Result<VideoTensor> {
        match self.split.expert_for(t) {
            Expert::High => self.high.velocity(x, t),
            _ => self.low.velocity(x, t),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Euler,
    Midpoint,
}

/// Integrates `dx/dt = v(x, t)` from `t = 1` down to `t = 0` in `n_steps`
/// uniform steps and returns the `t = 0` state.
pub fn integrate_ode(
    field: &dyn VelocityField,
    x1: &VideoTensor,
    n_steps: usize,
    solver: Solver,
) -> Result<VideoTensor> {
    integrate_ode_with(field, x1, n_steps, solver, |_, _| {})
}

/// As [`integrate_ode`], calling `observe(step, state)` after every step.
pub fn integrate_ode_with(
    field: &dyn VelocityField,
    x1: &VideoTensor,
    n_steps: usize,
    solver: Solver,
    mut observe: impl FnMut(usize, &VideoTensor),
) -> Result<VideoTensor> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let n = n_steps as f64;
    let h = 1.0 / n;
    let mut x = x1.clone();
    for k in 0..n_steps {
        let t = Timestep((n_steps - k) as f64 / n);
        let v = match solver {
            Solver::Euler => field.velocity(&x, t)?,
            Solver::Midpoint => {
                let v0 = field.velocity(&x, t)?;
                let mut mid = x.clone();
                mid.axpy(-0.5 * h, &v0)?;
                let t_mid = Timestep((2.0 * (n_steps - k) as f64 - 1.0) / (2.0 * n));
                field.velocity(&mid, t_mid)?
            }
        };
        x.axpy(-h, &v)?;
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("ODE state after step {k}")));
        }
        observe(k, &x);
    }
    Ok(x)
}
