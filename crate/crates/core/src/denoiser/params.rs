use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::Tensor;

/// How camera latents reach the video tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    #[default]
    Add,
    CrossAttention,
}

impl FromStr for CameraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(CameraMode::Add),
            "cross_attention" => Ok(CameraMode::CrossAttention),
            other => Err(Error::UnsupportedMode(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub camera_hidden: usize,
    pub time_features: usize,
    /// Fixed sinusoidal spatial and temporal position encodings.
    pub positional: bool,
    pub camera_mode: CameraMode,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 3,
            patch: 4,
            dim: 64,
            blocks: 4,
            heads: 4,
            ff_mult: 4,
            camera_hidden: 64,
            time_features: 32,
            positional: true,
            camera_mode: CameraMode::Add,
        }
    }
}

impl DenoiserConfig {
    /// The smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        DenoiserConfig {
            dim: 8,
            blocks: 1,
            heads: 2,
            ff_mult: 2,
            camera_hidden: 8,
            time_features: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.channels == 0 || self.patch == 0 || self.blocks == 0 || self.heads == 0 {
            return bad("channels, patch, blocks and heads must be positive");
        }
        if self.dim == 0 || self.dim % 4 != 0 {
            return bad("dim must be a positive multiple of 4");
        }
        if self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        if self.ff_mult == 0 || self.camera_hidden == 0 {
            return bad("ff_mult and camera_hidden must be positive");
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return bad("time_features must be a positive even number");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn camera_patch_len(&self) -> usize {
        self.patch * self.patch * 6
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, std: f64) -> Linear {
    Linear::new(Tensor::randn(&[fan_in, fan_out], std, rng), Tensor::zeros(&[fan_out]))
}

fn fan_in_init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Linear {
    gaussian(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

type Named<'a> = Vec<(String, &'a Tensor)>;
type NamedMut<'a> = Vec<(String, &'a mut Tensor)>;

fn push_linear<'a>(out: &mut Named<'a>, p: &str, l: &'a Linear) {
    out.push((format!("{p}.w"), &l.w));
    out.push((format!("{p}.b"), &l.b));
}

fn push_linear_mut<'a>(out: &mut NamedMut<'a>, p: &str, l: &'a mut Linear) {
    out.push((format!("{p}.w"), &mut l.w));
    out.push((format!("{p}.b"), &mut l.b));
}

fn push_norm<'a>(out: &mut Named<'a>, p: &str, n: &'a LayerNorm) {
    out.push((format!("{p}.gamma"), &n.gamma));
    out.push((format!("{p}.beta"), &n.beta));
}

fn push_norm_mut<'a>(out: &mut NamedMut<'a>, p: &str, n: &'a mut LayerNorm) {
    out.push((format!("{p}.gamma"), &mut n.gamma));
    out.push((format!("{p}.beta"), &mut n.beta));
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub qkv: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub spatial: Attention,
    pub norm2: LayerNorm,
    pub temporal: Attention,
    pub norm3: LayerNorm,
    pub ff: FeedForward,
}

/// Video tokens attend to the camera latents of their own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention {
    pub norm: LayerNorm,
    pub q: Linear,
    pub kv: Linear,
    pub out: Linear,
}

/// Strided patch reduction of the Plücker grid (`hidden`), SiLU, then a
/// projection to model width (`proj`) that starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraEncoder {
    pub hidden: Linear,
    pub proj: Linear,
    pub cross: Option<CrossAttention>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: DenoiserConfig,
    pub patch: Linear,
    pub time: Linear,
    pub null_token: Tensor,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
    pub unpatch: Linear,
    pub camera: Option<CameraEncoder>,
}

/// Prefix shared by every camera-encoder tensor name.
pub const CAMERA_PREFIX: &str = "camera.";

impl ModelParams {
    /// Backbone parameters without a camera encoder.
    pub fn init<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let attention = |rng: &mut R| Attention {
            qkv: fan_in_init(rng, d, 3 * d),
            out: gaussian(rng, d, d, 1.0 / (d as f64 * 2.0 * config.blocks as f64).sqrt()),
        };
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let spatial = attention(rng);
            let temporal = attention(rng);
            let hidden = config.ff_mult * d;
            blocks.push(Block {
                norm1: LayerNorm::identity(d),
                spatial,
                norm2: LayerNorm::identity(d),
                temporal,
                norm3: LayerNorm::identity(d),
                ff: FeedForward {
                    up: fan_in_init(rng, d, hidden),
                    down: gaussian(rng, hidden, d, 1.0 / (hidden as f64 * 2.0 * config.blocks as f64).sqrt()),
                },
            });
        }
        Ok(ModelParams {
            config: config.clone(),
            patch: fan_in_init(rng, config.patch_len(), d),
            time: fan_in_init(rng, config.time_features, d),
            null_token: Tensor::zeros(&[d]),
            blocks,
            final_norm: LayerNorm::identity(d),
            unpatch: fan_in_init(rng, d, config.patch_len()),
            camera: None,
        })
    }

    /// [`ModelParams::init`] from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        Self::init(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// Backbone plus a freshly created camera encoder.
    pub fn init_with_camera<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(config, rng)?;
        p.attach_camera(rng);
        Ok(p)
    }

    /// Creates the camera encoder with a zero output projection, so camera
    /// input has no effect until it is trained. No-op if already present.
    pub fn attach_camera<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.camera.is_some() {
            return;
        }
        let c = &self.config;
        let d = c.dim;
        let hidden = fan_in_init(rng, c.camera_patch_len(), c.camera_hidden);
        let cross = match c.camera_mode {
            CameraMode::Add => None,
            CameraMode::CrossAttention => Some(CrossAttention {
                norm: LayerNorm::identity(d),
                q: fan_in_init(rng, d, d),
                kv: fan_in_init(rng, d, 2 * d),
                out: fan_in_init(rng, d, d),
            }),
        };
        self.camera = Some(CameraEncoder {
            hidden,
            proj: Linear::zeros(c.camera_hidden, d),
            cross,
        });
    }

    /// All-zero tensors with the same structure, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every tensor with its stable dotted name, in a fixed order.
    pub fn named(&self) -> Named<'_> {
        let mut out = Vec::new();
        push_linear(&mut out, "patch", &self.patch);
        push_linear(&mut out, "time", &self.time);
        out.push(("null_token".to_string(), &self.null_token));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            push_norm(&mut out, &format!("{p}.norm1"), &b.norm1);
            push_linear(&mut out, &format!("{p}.spatial.qkv"), &b.spatial.qkv);
            push_linear(&mut out, &format!("{p}.spatial.out"), &b.spatial.out);
            push_norm(&mut out, &format!("{p}.norm2"), &b.norm2);
            push_linear(&mut out, &format!("{p}.temporal.qkv"), &b.temporal.qkv);
            push_linear(&mut out, &format!("{p}.temporal.out"), &b.temporal.out);
            push_norm(&mut out, &format!("{p}.norm3"), &b.norm3);
            push_linear(&mut out, &format!("{p}.ff.up"), &b.ff.up);
            push_linear(&mut out, &format!("{p}.ff.down"), &b.ff.down);
        }
        push_norm(&mut out, "final_norm", &self.final_norm);
        push_linear(&mut out, "unpatch", &self.unpatch);
        if let Some(cam) = &self.camera {
            push_linear(&mut out, "camera.hidden", &cam.hidden);
            push_linear(&mut out, "camera.proj", &cam.proj);
            if let Some(x) = &cam.cross {
                push_norm(&mut out, "camera.cross.norm", &x.norm);
                push_linear(&mut out, "camera.cross.q", &x.q);
                push_linear(&mut out, "camera.cross.kv", &x.kv);
                push_linear(&mut out, "camera.cross.out", &x.out);
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> NamedMut<'_> {
        let mut out = Vec::new();
        push_linear_mut(&mut out, "patch", &mut self.patch);
        push_linear_mut(&mut out, "time", &mut self.time);
        out.push(("null_token".to_string(), &mut self.null_token));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            push_norm_mut(&mut out, &format!("{p}.norm1"), &mut b.norm1);
            push_linear_mut(&mut out, &format!("{p}.spatial.qkv"), &mut b.spatial.qkv);
            push_linear_mut(&mut out, &format!("{p}.spatial.out"), &mut b.spatial.out);
            push_norm_mut(&mut out, &format!("{p}.norm2"), &mut b.norm2);
            push_linear_mut(&mut out, &format!("{p}.temporal.qkv"), &mut b.temporal.qkv);
            push_linear_mut(&mut out, &format!("{p}.temporal.out"), &mut b.temporal.out);
            push_norm_mut(&mut out, &format!("{p}.norm3"), &mut b.norm3);
            push_linear_mut(&mut out, &format!("{p}.ff.up"), &mut b.ff.up);
            push_linear_mut(&mut out, &format!("{p}.ff.down"), &mut b.ff.down);
        }
        push_norm_mut(&mut out, "final_norm", &mut self.final_norm);
        push_linear_mut(&mut out, "unpatch", &mut self.unpatch);
        if let Some(cam) = &mut self.camera {
            push_linear_mut(&mut out, "camera.hidden", &mut cam.hidden);
            push_linear_mut(&mut out, "camera.proj", &mut cam.proj);
            if let Some(x) = &mut cam.cross {
                push_norm_mut(&mut out, "camera.cross.norm", &mut x.norm);
                push_linear_mut(&mut out, "camera.cross.q", &mut x.q);
                push_linear_mut(&mut out, "camera.cross.kv", &mut x.kv);
                push_linear_mut(&mut out, "camera.cross.out", &mut x.out);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// `self += scale · other`; both must have the same structure.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) -> Result<()> {
        let src = other.named();
        let mut dst = self.named_mut();
        if src.len() != dst.len() {
            return Err(Error::shape(&[dst.len()], &[src.len()]));
        }
        for ((dn, d), (sn, s)) in dst.iter_mut().zip(&src) {
            if dn != sn {
                return Err(Error::ConfigMismatch(format!("parameter {dn} vs {sn}")));
            }
            d.same_shape(s)?;
            for (a, b) in d.data_mut().iter_mut().zip(s.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.named_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    /// SHA-256 over names, shapes and little-endian values of the tensors
    /// accepted by `filter`.
    pub fn hash_filtered(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named() {
            if !filter(&name) {
                continue;
            }
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_filtered(|_| true)
    }

    pub fn backbone_hash(&self) -> String {
        self.hash_filtered(|n| !n.starts_with(CAMERA_PREFIX))
    }
}
