//! Dense row-major tensors and the two image-shaped views built on them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major, double precision, owned n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(&[n], &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// An `F x H x W x C` frame stack. Houses clean videos, noise, interpolants
/// and velocities alike.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor(Tensor);

impl VideoTensor {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        VideoTensor(Tensor::zeros(&[frames, height, width, channels]))
    }

    pub fn filled(frames: usize, height: usize, width: usize, channels: usize, v: f64) -> Self {
        VideoTensor(Tensor::filled(&[frames, height, width, channels], v))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.shape().len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "video tensors are 4-D, got shape {:?}",
                t.shape()
            )));
        }
        Ok(VideoTensor(t))
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        Ok(VideoTensor(Tensor::from_vec(&dims, data)?))
    }

    /// i.i.d. standard normal noise.
    pub fn randn<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Self {
        VideoTensor(Tensor::randn(&dims, 1.0, rng))
    }

    /// Stacks frames' RGB planes; alpha is dropped.
    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("no frames to stack".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(frames.len() * h * w * 3);
        for f in frames {
            if f.height() != h || f.width() != w {
                return Err(Error::shape(&[h, w], &[f.height(), f.width()]));
            }
            data.extend_from_slice(f.pixels());
        }
        Self::from_vec([frames.len(), h, w, 3], data)
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.0.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn frame_len(&self) -> usize {
        self.height() * self.width() * self.channels()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.0.data()[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.0.data_mut()[i * n..(i + 1) * n]
    }

    /// Extracts frame `i` as an RGB [`Frame`] with full alpha.
    pub fn to_frame(&self, i: usize) -> Result<Frame> {
        if self.channels() != 3 {
            return Err(Error::InvalidArgument(format!(
                "frames need 3 channels, video has {}",
                self.channels()
            )));
        }
        Frame::from_pixels(self.height(), self.width(), self.frame(i).to_vec())
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn same_shape(&self, other: &VideoTensor) -> Result<()> {
        self.0.same_shape(&other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn max_abs_diff(&self, other: &VideoTensor) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    /// Elementwise `self + scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &VideoTensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.0.data_mut().iter_mut().zip(other.data()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoTensor {
        let data = self.data().iter().map(|&v| f(v)).collect();
        VideoTensor(Tensor {
            shape: self.0.shape.clone(),
            data,
        })
    }
}

/// An RGB image with per-pixel coverage, all values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    alpha: Vec<f64>,
}

impl Frame {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        Frame {
            height,
            width,
            pixels,
            alpha: vec![1.0; height * width],
        }
    }

    /// Opaque frame from interleaved RGB values.
    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::shape(&[height, width, 3], &[pixels.len()]));
        }
        Ok(Frame {
            height,
            width,
            pixels,
            alpha: vec![1.0; height * width],
        })
    }

    pub fn from_parts(height: usize, width: usize, pixels: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != height * width {
            return Err(Error::shape(&[height, width], &[alpha.len()]));
        }
        let mut f = Frame::from_pixels(height, width, pixels)?;
        f.alpha = alpha;
        Ok(f)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn rgb(&self, i: usize, j: usize) -> [f64; 3] {
        let k = (i * self.width + j) * 3;
        [self.pixels[k], self.pixels[k + 1], self.pixels[k + 2]]
    }

    pub fn set_rgb(&mut self, i: usize, j: usize, rgb: [f64; 3]) {
        let k = (i * self.width + j) * 3;
        self.pixels[k..k + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Frame) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
