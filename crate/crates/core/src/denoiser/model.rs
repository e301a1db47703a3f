use serde::{Deserialize, Serialize};

use super::params::{Block, CameraEncoder, CrossAttention, ModelParams};
use crate::camera::PluckerGrid;
use crate::error::{Error, Result};
use crate::flow::{fm_loss_with_grad, Timestep};
use crate::nn::{
    add_into, attend, attend_backward, silu, silu_grad, sinusoid, AttnLayout, Cols, ColsMut, LayerNorm, Linear,
    LnCache,
};
use crate::tensor::{Tensor, VideoTensor};

/// Most reference images a sequence may carry.
pub const MAX_REFERENCES: usize = 4;

/// Frequency multiplier applied to `t ∈ [0, 1]` before the sinusoidal
/// timestep features.
const TIME_SCALE: f64 = 1000.0;

/// Shape of a token sequence: `frames` video slots followed by `references`
/// reference slots, each holding a `grid_h × grid_w` token grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub frames: usize,
    pub references: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl SequenceLayout {
    pub fn grid(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn slots(&self) -> usize {
        self.frames + self.references
    }

    pub fn len(&self) -> usize {
        self.slots() * self.grid()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn video_len(&self) -> usize {
        self.frames * self.grid()
    }

    /// True exactly on video-token positions.
    pub fn loss_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| i < self.video_len()).collect()
    }

    /// Per-slot form of [`Self::loss_mask`].
    pub fn frame_mask(&self) -> Vec<bool> {
        (0..self.slots()).map(|s| s < self.frames).collect()
    }

    fn spatial(&self) -> AttnLayout {
        AttnLayout {
            groups: self.slots(),
            len: self.grid(),
            group_stride: self.grid(),
            elem_stride: 1,
        }
    }

    fn temporal(&self) -> AttnLayout {
        AttnLayout {
            groups: self.grid(),
            len: self.slots(),
            group_stride: 1,
            elem_stride: self.grid(),
        }
    }

    fn video_frames(&self) -> AttnLayout {
        AttnLayout {
            groups: self.frames,
            len: self.grid(),
            group_stride: self.grid(),
            elem_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    /// `S × D`, video slots first.
    pub tokens: Tensor,
    pub layout: SequenceLayout,
    pub loss_mask: Vec<bool>,
    /// Camera latents kept aside for the cross-attention injection mode.
    pub camera_context: Option<Tensor>,
}

/// Inputs to one denoiser evaluation. Videos are in model space.
#[derive(Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub x_t: &'a VideoTensor,
    pub t: Timestep,
    /// One Plücker grid per video frame; `None` runs without camera input.
    pub cameras: Option<&'a [PluckerGrid]>,
    /// `R × H × W × C` reference images.
    pub references: &'a VideoTensor,
}

fn grid_dims(h: usize, w: usize, p: usize) -> Result<(usize, usize)> {
    if h % p != 0 || w % p != 0 {
        return Err(Error::IndivisibleResolution { height: h, width: w, patch: p });
    }
    Ok((h / p, w / p))
}

/// Rows of `p·p·C` patch values, ordered (frame, patch row, patch col) with
/// each patch flattened as (row, col, channel).
pub fn extract_patches(video: &VideoTensor, p: usize) -> Result<Vec<f64>> {
    let [f, h, w, c] = video.dims();
    let (gh, gw) = grid_dims(h, w, p)?;
    let mut out = Vec::with_capacity(video.data().len());
    let src = video.data();
    for fi in 0..f {
        for gi in 0..gh {
            for gj in 0..gw {
                for a in 0..p {
                    let row = ((fi * h + gi * p + a) * w + gj * p) * c;
                    out.extend_from_slice(&src[row..row + p * c]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`extract_patches`].
pub fn assemble_patches(rows: &[f64], dims: [usize; 4], p: usize) -> Result<VideoTensor> {
    let [f, h, w, c] = dims;
    let (gh, gw) = grid_dims(h, w, p)?;
    if rows.len() != f * h * w * c {
        return Err(Error::shape(&[f * h * w * c], &[rows.len()]));
    }
    let mut out = VideoTensor::zeros(f, h, w, c);
    let dst = out.data_mut();
    let mut k = 0;
    for fi in 0..f {
        for gi in 0..gh {
            for gj in 0..gw {
                for a in 0..p {
                    let row = ((fi * h + gi * p + a) * w + gj * p) * c;
                    dst[row..row + p * c].copy_from_slice(&rows[k..k + p * c]);
                    k += p * c;
                }
            }
        }
    }
    Ok(out)
}

/// Linear embedding of every `p × p × C` patch: an `F·G × D` token grid.
pub fn patchify(video: &VideoTensor, p: usize, embed: &Linear) -> Result<Tensor> {
    let k = p * p * video.channels();
    if embed.fan_in() != k {
        return Err(Error::shape(&[k], &[embed.fan_in()]));
    }
    let rows = extract_patches(video, p)?;
    let n = rows.len() / k;
    Tensor::from_vec(&[n, embed.fan_out()], embed.forward(&rows, n))
}

/// Projects `F·G × D` tokens back to pixels.
pub fn unpatchify(tokens: &Tensor, unembed: &Linear, dims: [usize; 4], p: usize) -> Result<VideoTensor> {
    let d = unembed.fan_in();
    if tokens.shape().len() != 2 || tokens.shape()[1] != d {
        return Err(Error::shape(&[tokens.len() / d.max(1), d], tokens.shape()));
    }
    let rows = unembed.forward(tokens.data(), tokens.shape()[0]);
    assemble_patches(&rows, dims, p)
}

fn plucker_patches(grids: &[PluckerGrid], h: usize, w: usize, p: usize) -> Result<Vec<f64>> {
    for g in grids {
        if g.height() != h || g.width() != w {
            return Err(Error::shape(&[h, w, 6], &[g.height(), g.width(), 6]));
        }
    }
    let mut data = Vec::with_capacity(grids.len() * h * w * 6);
    for g in grids {
        data.extend_from_slice(g.data());
    }
    extract_patches(&VideoTensor::from_vec([grids.len(), h, w, 6], data)?, p)
}

struct CameraCache {
    patches: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    latent: Vec<f64>,
}

fn camera_forward(enc: &CameraEncoder, grids: &[PluckerGrid], h: usize, w: usize, p: usize) -> Result<CameraCache> {
    let patches = plucker_patches(grids, h, w, p)?;
    let n = patches.len() / (6 * p * p);
    let pre = enc.hidden.forward(&patches, n);
    let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
    let latent = enc.proj.forward(&act, n);
    Ok(CameraCache { patches, pre, act, latent })
}

/// Per-frame strided patch reduction of the Plücker grids followed by a
/// projection to model width: `F·G × D`, aligned with the video tokens.
pub fn camera_encoder(grids: &[PluckerGrid], enc: &CameraEncoder, p: usize) -> Result<Tensor> {
    let Some(first) = grids.first() else {
        return Err(Error::InvalidArgument("no camera grids".into()));
    };
    let (h, w) = (first.height(), first.width());
    let c = camera_forward(enc, grids, h, w, p)?;
    let d = enc.proj.fan_out();
    Tensor::from_vec(&[c.latent.len() / d, d], c.latent)
}

fn positional_table(layout: &SequenceLayout, d: usize) -> Vec<f64> {
    let g = layout.grid();
    let mut spatial = vec![0.0; g * d];
    for gi in 0..layout.grid_h {
        for gj in 0..layout.grid_w {
            let row = &mut spatial[(gi * layout.grid_w + gj) * d..][..d];
            sinusoid(gi as f64, d / 2, &mut row[..d / 2]);
            sinusoid(gj as f64, d / 2, &mut row[d / 2..]);
        }
    }
    let mut out = vec![0.0; layout.len() * d];
    let mut temporal = vec![0.0; d];
    for s in 0..layout.slots() {
        sinusoid(s as f64, d, &mut temporal);
        for k in 0..g {
            let row = &mut out[(s * g + k) * d..][..d];
            for c in 0..d {
                row[c] = spatial[k * d + c] + temporal[c];
            }
        }
    }
    out
}

fn time_features(t: Timestep, n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n];
    sinusoid(TIME_SCALE * t.value(), n, &mut f);
    f
}

fn check_references(n: usize) -> Result<()> {
    if n > MAX_REFERENCES {
        return Err(Error::TooManyReferences { count: n });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("at least one reference image is required".into()));
    }
    Ok(())
}

/// Builds the token sequence: camera latents summed into video tokens (add
/// mode), the null-camera token added to reference tokens, the timestep
/// embedding and position encodings added everywhere, references last.
pub fn assemble_sequence(
    video_tokens: &Tensor,
    camera_latent: Option<&Tensor>,
    reference_tokens: &Tensor,
    t: Timestep,
    params: &ModelParams,
    grid: (usize, usize),
) -> Result<TokenSequence> {
    let d = params.config.dim;
    let g = grid.0 * grid.1;
    let check = |t: &Tensor| -> Result<usize> {
        let s = t.shape();
        if s.len() != 2 || s[1] != d || s[0] % g != 0 {
            return Err(Error::shape(&[g, d], s));
        }
        Ok(s[0] / g)
    };
    let frames = check(video_tokens)?;
    let references = check(reference_tokens)?;
    check_references(references)?;
    if let Some(c) = camera_latent {
        if c.shape() != video_tokens.shape() {
            return Err(Error::shape(video_tokens.shape(), c.shape()));
        }
    }
    let layout = SequenceLayout { frames, references, grid_h: grid.0, grid_w: grid.1 };
    let mut tokens = video_tokens.data().to_vec();
    let mut context = None;
    if let Some(c) = camera_latent {
        if params.config.camera_mode == super::CameraMode::Add {
            add_into(&mut tokens, c.data());
        } else {
            context = Some(c.clone());
        }
    }
    tokens.extend_from_slice(reference_tokens.data());
    finish_tokens(&mut tokens, &layout, t, params);
    Ok(TokenSequence {
        tokens: Tensor::from_vec(&[layout.len(), d], tokens)?,
        loss_mask: layout.loss_mask(),
        layout,
        camera_context: context,
    })
}

fn finish_tokens(tokens: &mut [f64], layout: &SequenceLayout, t: Timestep, params: &ModelParams) -> Vec<f64> {
    let d = params.config.dim;
    let null = params.null_token.data();
    for row in tokens[layout.video_len() * d..].chunks_exact_mut(d) {
        add_into(row, null);
    }
    let feats = time_features(t, params.config.time_features);
    let temb = params.time.forward(&feats, 1);
    for row in tokens.chunks_exact_mut(d) {
        add_into(row, &temb);
    }
    if params.config.positional {
        add_into(tokens, &positional_table(layout, d));
    }
    feats
}

struct AttnCache {
    ln: LnCache,
    h: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    heads_out: Vec<f64>,
}

struct BlockCache {
    spatial: AttnCache,
    temporal: AttnCache,
    ln3: LnCache,
    h3: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct CrossCache {
    ln: LnCache,
    h: Vec<f64>,
    q: Vec<f64>,
    kv: Vec<f64>,
    probs: Vec<f64>,
    heads_out: Vec<f64>,
}

/// Intermediate values kept by [`forward_sequence`] for [`backward`].
pub struct ForwardCache {
    layout: SequenceLayout,
    dims: [usize; 4],
    patches: Vec<f64>,
    time_feats: Vec<f64>,
    camera: Option<CameraCache>,
    cross: Option<CrossCache>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
    final_h: Vec<f64>,
}

impl ForwardCache {
    pub fn layout(&self) -> SequenceLayout {
        self.layout
    }
}

fn self_attention(
    norm: &LayerNorm,
    attn: &super::params::Attention,
    x: &mut [f64],
    layout: AttnLayout,
    heads: usize,
    d: usize,
) -> AttnCache {
    let s = x.len() / d;
    let (h, ln) = norm.forward(x);
    let qkv = attn.qkv.forward(&h, s);
    let mut heads_out = vec![0.0; s * d];
    let cols = |off| Cols { buf: &qkv, ld: 3 * d, off };
    let probs = attend(cols(0), cols(d), cols(2 * d), layout, heads, d / heads, &mut heads_out);
    add_into(x, &attn.out.forward(&heads_out, s));
    AttnCache { ln, h, qkv, probs, heads_out }
}

fn self_attention_backward(
    norm: &LayerNorm,
    attn: &super::params::Attention,
    c: &AttnCache,
    dx: &mut [f64],
    layout: AttnLayout,
    heads: usize,
    d: usize,
    gnorm: &mut LayerNorm,
    gattn: &mut super::params::Attention,
) {
    let s = dx.len() / d;
    let dheads = attn.out.backward(&c.heads_out, dx, s, &mut gattn.out);
    let (mut dq, mut dk, mut dv) = (vec![0.0; s * d], vec![0.0; s * d], vec![0.0; s * d]);
    let cols = |off| Cols { buf: &c.qkv, ld: 3 * d, off };
    attend_backward(
        cols(0),
        cols(d),
        cols(2 * d),
        &c.probs,
        &dheads,
        layout,
        heads,
        d / heads,
        &mut ColsMut { buf: &mut dq, ld: d, off: 0 },
        &mut ColsMut { buf: &mut dk, ld: d, off: 0 },
        &mut ColsMut { buf: &mut dv, ld: d, off: 0 },
    );
    let dqkv = interleave(&[&dq, &dk, &dv], s, d);
    let dh = attn.qkv.backward(&c.h, &dqkv, s, &mut gattn.qkv);
    add_into(dx, &norm.backward(&c.ln, &dh, gnorm));
}

/// Concatenates equally shaped `rows × d` blocks column-wise.
fn interleave(parts: &[&[f64]], rows: usize, d: usize) -> Vec<f64> {
    let n = parts.len();
    let mut out = vec![0.0; rows * n * d];
    for r in 0..rows {
        for (i, p) in parts.iter().enumerate() {
            out[(r * n + i) * d..][..d].copy_from_slice(&p[r * d..][..d]);
        }
    }
    out
}

fn block_forward(b: &Block, x: &mut [f64], layout: &SequenceLayout, heads: usize, d: usize) -> BlockCache {
    let s = x.len() / d;
    let spatial = self_attention(&b.norm1, &b.spatial, x, layout.spatial(), heads, d);
    let temporal = self_attention(&b.norm2, &b.temporal, x, layout.temporal(), heads, d);
    let (h3, ln3) = b.norm3.forward(x);
    let pre = b.ff.up.forward(&h3, s);
    let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
    add_into(x, &b.ff.down.forward(&act, s));
    BlockCache { spatial, temporal, ln3, h3, pre, act }
}

fn block_backward(b: &Block, c: &BlockCache, dx: &mut [f64], layout: &SequenceLayout, heads: usize, d: usize, g: &mut Block) {
    let s = dx.len() / d;
    let mut dpre = b.ff.down.backward(&c.act, dx, s, &mut g.ff.down);
    for (v, &p) in dpre.iter_mut().zip(&c.pre) {
        *v *= silu_grad(p);
    }
    let dh3 = b.ff.up.backward(&c.h3, &dpre, s, &mut g.ff.up);
    add_into(dx, &b.norm3.backward(&c.ln3, &dh3, &mut g.norm3));
    self_attention_backward(&b.norm2, &b.temporal, &c.temporal, dx, layout.temporal(), heads, d, &mut g.norm2, &mut g.temporal);
    self_attention_backward(&b.norm1, &b.spatial, &c.spatial, dx, layout.spatial(), heads, d, &mut g.norm1, &mut g.spatial);
}

fn cross_forward(ca: &CrossAttention, xv: &mut [f64], context: &[f64], layout: &SequenceLayout, heads: usize, d: usize) -> CrossCache {
    let n = xv.len() / d;
    let (h, ln) = ca.norm.forward(xv);
    let q = ca.q.forward(&h, n);
    let kv = ca.kv.forward(context, n);
    let mut heads_out = vec![0.0; n * d];
    let probs = attend(
        Cols { buf: &q, ld: d, off: 0 },
        Cols { buf: &kv, ld: 2 * d, off: 0 },
        Cols { buf: &kv, ld: 2 * d, off: d },
        layout.video_frames(),
        heads,
        d / heads,
        &mut heads_out,
    );
    add_into(xv, &ca.out.forward(&heads_out, n));
    CrossCache { ln, h, q, kv, probs, heads_out }
}

/// Returns the gradient with respect to the camera context.
#[allow(clippy::too_many_arguments)]
fn cross_backward(
    ca: &CrossAttention,
    c: &CrossCache,
    dxv: &mut [f64],
    context: &[f64],
    layout: &SequenceLayout,
    heads: usize,
    d: usize,
    g: &mut CrossAttention,
) -> Vec<f64> {
    let n = dxv.len() / d;
    let dheads = ca.out.backward(&c.heads_out, dxv, n, &mut g.out);
    let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
    attend_backward(
        Cols { buf: &c.q, ld: d, off: 0 },
        Cols { buf: &c.kv, ld: 2 * d, off: 0 },
        Cols { buf: &c.kv, ld: 2 * d, off: d },
        &c.probs,
        &dheads,
        layout.video_frames(),
        heads,
        d / heads,
        &mut ColsMut { buf: &mut dq, ld: d, off: 0 },
        &mut ColsMut { buf: &mut dk, ld: d, off: 0 },
        &mut ColsMut { buf: &mut dv, ld: d, off: 0 },
    );
    let dh = ca.q.backward(&c.h, &dq, n, &mut g.q);
    add_into(dxv, &ca.norm.backward(&c.ln, &dh, &mut g.norm));
    let dkv = interleave(&[&dk, &dv], n, d);
    ca.kv.backward(context, &dkv, n, &mut g.kv)
}

fn validate_input(params: &ModelParams, input: &DenoiserInput) -> Result<()> {
    let cfg = &params.config;
    let [f, h, w, c] = input.x_t.dims();
    if c != cfg.channels {
        return Err(Error::shape(&[f, h, w, cfg.channels], &input.x_t.dims()));
    }
    grid_dims(h, w, cfg.patch)?;
    let [r, rh, rw, rc] = input.references.dims();
    check_references(r)?;
    if (rh, rw, rc) != (h, w, c) {
        return Err(Error::shape(&[r, h, w, c], &input.references.dims()));
    }
    if let Some(cams) = input.cameras {
        if cams.len() != f {
            return Err(Error::shape(&[f], &[cams.len()]));
        }
        if params.camera.is_none() {
            return Err(Error::InvalidArgument("camera input given to a model without a camera encoder".into()));
        }
    }
    Ok(())
}

/// Runs the full network and returns predictions for every slot
/// (`F + R` frames, references last) together with the backward cache.
pub fn forward_sequence(params: &ModelParams, input: &DenoiserInput) -> Result<(VideoTensor, ForwardCache)> {
    validate_input(params, input)?;
    let cfg = &params.config;
    let (d, p, heads) = (cfg.dim, cfg.patch, cfg.heads);
    let [f, h, w, ch] = input.x_t.dims();
    let r = input.references.frames();
    let (gh, gw) = grid_dims(h, w, p)?;
    let layout = SequenceLayout { frames: f, references: r, grid_h: gh, grid_w: gw };
    let s = layout.len();

    let mut patches = extract_patches(input.x_t, p)?;
    patches.extend(extract_patches(input.references, p)?);
    let mut x = params.patch.forward(&patches, s);

    let camera = match (input.cameras, &params.camera) {
        (Some(grids), Some(enc)) => Some(camera_forward(enc, grids, h, w, p)?),
        _ => None,
    };
    let cross_mode = params.camera.as_ref().and_then(|c| c.cross.as_ref());
    if let (Some(cam), None) = (&camera, cross_mode) {
        add_into(&mut x[..layout.video_len() * d], &cam.latent);
    }
    let time_feats = finish_tokens(&mut x, &layout, input.t, params);

    let cross = match (&camera, cross_mode) {
        (Some(cam), Some(ca)) => Some(cross_forward(ca, &mut x[..layout.video_len() * d], &cam.latent, &layout, heads, d)),
        _ => None,
    };

    let blocks = params
        .blocks
        .iter()
        .map(|b| block_forward(b, &mut x, &layout, heads, d))
        .collect();
    let (final_h, final_ln) = params.final_norm.forward(&x);
    let out_rows = params.unpatch.forward(&final_h, s);
    let out = assemble_patches(&out_rows, [f + r, h, w, ch], p)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("denoiser output".into()));
    }
    let cache = ForwardCache {
        layout,
        dims: [f + r, h, w, ch],
        patches,
        time_feats,
        camera,
        cross,
        blocks,
        final_ln,
        final_h,
    };
    Ok((out, cache))
}

/// Velocity prediction for the video frames only.
pub fn forward(params: &ModelParams, input: &DenoiserInput) -> Result<VideoTensor> {
    let (out, cache) = forward_sequence(params, input)?;
    let f = cache.layout.frames;
    let [_, h, w, c] = cache.dims;
    VideoTensor::from_vec([f, h, w, c], out.data()[..f * h * w * c].to_vec())
}

/// Exact parameter gradients given the gradient of a scalar objective with
/// respect to every slot of the [`forward_sequence`] output.
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_out: &VideoTensor) -> Result<ModelParams> {
    if d_out.dims() != cache.dims {
        return Err(Error::shape(&cache.dims, &d_out.dims()));
    }
    let cfg = &params.config;
    let (d, p, heads) = (cfg.dim, cfg.patch, cfg.heads);
    let layout = &cache.layout;
    let s = layout.len();
    let vlen = layout.video_len() * d;
    let mut g = params.zeros_like();

    let dy = extract_patches(d_out, p)?;
    let dh = params.unpatch.backward(&cache.final_h, &dy, s, &mut g.unpatch);
    let mut dx = params.final_norm.backward(&cache.final_ln, &dh, &mut g.final_norm);
    for ((b, c), gb) in params.blocks.iter().zip(&cache.blocks).zip(g.blocks.iter_mut()).rev() {
        block_backward(b, c, &mut dx, layout, heads, d, gb);
    }

    if let Some(cam) = &cache.camera {
        let enc = params.camera.as_ref().expect("camera cache implies encoder");
        let genc = g.camera.as_mut().expect("gradient mirrors params");
        let dlatent = match (&cache.cross, &enc.cross) {
            (Some(cc), Some(ca)) => {
                let gca = genc.cross.as_mut().expect("gradient mirrors params");
                cross_backward(ca, cc, &mut dx[..vlen], &cam.latent, layout, heads, d, gca)
            }
            _ => dx[..vlen].to_vec(),
        };
        let n = layout.video_len();
        let mut dpre = enc.proj.backward(&cam.act, &dlatent, n, &mut genc.proj);
        for (v, &x) in dpre.iter_mut().zip(&cam.pre) {
            *v *= silu_grad(x);
        }
        enc.hidden.accumulate(&cam.patches, &dpre, n, &mut genc.hidden);
    }

    let gnull = g.null_token.data_mut();
    for row in dx[vlen..].chunks_exact(d) {
        add_into(gnull, row);
    }
    let mut dtemb = vec![0.0; d];
    for row in dx.chunks_exact(d) {
        add_into(&mut dtemb, row);
    }
    params.time.accumulate(&cache.time_feats, &dtemb, 1, &mut g.time);
    params.patch.accumulate(&cache.patches, &dx, s, &mut g.patch);

    if !g.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    Ok(g)
}

/// Flow-matching loss over video frames and its parameter gradient. Reference
/// slots are excluded from the loss by the sequence mask.
pub fn loss_and_grad(params: &ModelParams, input: &DenoiserInput, v_target: &VideoTensor) -> Result<(f64, ModelParams)> {
    let (out, cache) = forward_sequence(params, input)?;
    let layout = cache.layout;
    let [_, h, w, c] = cache.dims;
    if v_target.dims() != [layout.frames, h, w, c] {
        return Err(Error::shape(&[layout.frames, h, w, c], &v_target.dims()));
    }
    let mut full = v_target.data().to_vec();
    full.resize(out.data().len(), 0.0);
    let full = VideoTensor::from_vec(cache.dims, full)?;
    let (loss, d_out) = fm_loss_with_grad(&out, &full, Some(&layout.frame_mask()))?;
    let grads = backward(params, &cache, &d_out)?;
    Ok((loss, grads))
}

/// Maps pixel values in `[0, 1]` to the model's `[-1, 1]` range.
pub fn to_model_space(v: &VideoTensor) -> VideoTensor {
    v.map(|x| 2.0 * x - 1.0)
}

pub fn from_model_space(v: &VideoTensor) -> VideoTensor {
    v.map(|x| 0.5 * (x + 1.0))
}
