use crate::error::{Error, Result};
use crate::tensor::{Frame, VideoTensor};

/// Reported when the mean squared error is exactly zero.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Pixel data with a shape, for metrics defined on both frames and videos.
pub trait Image {
    fn values(&self) -> &[f64];
    fn dims(&self) -> Vec<usize>;
}

impl Image for Frame {
    fn values(&self) -> &[f64] {
        self.pixels()
    }

    fn dims(&self) -> Vec<usize> {
        vec![self.height(), self.width(), 3]
    }
}

impl Image for VideoTensor {
    fn values(&self) -> &[f64] {
        self.data()
    }

    fn dims(&self) -> Vec<usize> {
        VideoTensor::dims(self).to_vec()
    }
}

fn check_shapes<I: Image>(a: &I, b: &I) -> Result<()> {
    let (da, db) = (a.dims(), b.dims());
    if da != db {
        return Err(Error::shape(&da, &db));
    }
    Ok(())
}

pub fn mse<I: Image>(a: &I, b: &I) -> Result<f64> {
    check_shapes(a, b)?;
    let (x, y) = (a.values(), b.values());
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    Ok(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Peak signal-to-noise ratio in dB for unit-range signals.
pub fn psnr<I: Image>(a: &I, b: &I) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

fn gray(f: &Frame) -> Vec<f64> {
    f.pixels().chunks_exact(3).map(|c| (c[0] + c[1] + c[2]) / 3.0).collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over valid window positions.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|q| k[q] * img[i * w + j + q]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|q| k[q] * rows[(i + q) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity of the channel-mean grayscale images, using
/// an 11×11 Gaussian window (σ = 1.5) at every valid position.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::TooSmall { height: h, width: w });
    }
    let (x, y) = (gray(a), gray(b));
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter(&x, h, w, &k);
    let mu_y = filter(&y, h, w, &k);
    let xx = filter(&prod(&x, &x), h, w, &k);
    let yy = filter(&prod(&y, &y), h, w, &k);
    let xy = filter(&prod(&x, &y), h, w, &k);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Generated video and pose-matched oracle renders for one commanded camera
/// trajectory.
pub struct ControlCase<'a> {
    pub generated: &'a VideoTensor,
    pub oracle: &'a VideoTensor,
}

/// Mean over every commanded view of the per-frame MSE between the
/// generated frame and the oracle render from that camera.
pub fn camera_control_error(cases: &[ControlCase<'_>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for c in cases {
        c.generated.same_shape(c.oracle)?;
        let fl = c.oracle.frame_len();
        for f in 0..c.oracle.frames() {
            let (g, o) = (c.generated.frame(f), c.oracle.frame(f));
            total += g.iter().zip(o).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / fl as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no views to score".into()));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoothness {
    pub ratio: f64,
    /// Set when consecutive frames are (numerically) identical, in which case
    /// `ratio` is the sentinel 0.
    pub static_video: bool,
}

/// Largest cyclic frame-to-frame L2 step divided by the mean step. The
/// wrap-around pair (last → first) is included.
pub fn orbit_smoothness(video: &VideoTensor) -> Result<Smoothness> {
    let f = video.frames();
    if f < 4 {
        return Err(Error::TooFewFrames { frames: f, required: 4 });
    }
    let steps: Vec<f64> = (0..f)
        .map(|i| {
            let (a, b) = (video.frame(i), video.frame((i + 1) % f));
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        })
        .collect();
    let mean = steps.iter().sum::<f64>() / f as f64;
    if mean < 1e-9 {
        return Ok(Smoothness { ratio: 0.0, static_video: true });
    }
    let max = steps.iter().cloned().fold(0.0, f64::max);
    Ok(Smoothness { ratio: max / mean, static_video: false })
}

/// Mean over pixels and channels of the temporal (population) standard
/// deviation.
pub fn canonical_staticity(video: &VideoTensor) -> Result<f64> {
    let f = video.frames();
    if f < 2 {
        return Err(Error::TooFewFrames { frames: f, required: 2 });
    }
    let fl = video.frame_len();
    let total: f64 = (0..fl)
        .map(|j| {
            let mean = (0..f).map(|i| video.frame(i)[j]).sum::<f64>() / f as f64;
            let var = (0..f).map(|i| (video.frame(i)[j] - mean).powi(2)).sum::<f64>() / f as f64;
            var.sqrt()
        })
        .sum();
    Ok(total / fl as f64)
}

/// SSIM between a reference render and the generated frame at the same view.
pub fn identity_score(reference: &Frame, generated: &Frame) -> Result<f64> {
    ssim(reference, generated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(seed: u64, h: usize, w: usize) -> Frame {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_pixels(h, w, (0..h * w * 3).map(|_| r.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn psnr_conventions() {
        let a = random_frame(1, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let b = Frame::filled(8, 9, [0.0; 3]);
        assert!(matches!(psnr(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ssim_identities() {
        let a = random_frame(2, 16, 16);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let zero = Frame::filled(16, 16, [0.0; 3]);
        let one = Frame::filled(16, 16, [1.0; 3]);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zero, &one).unwrap() - expected).abs() < 1e-12);
        let mut b = a.clone();
        let v = b.rgb(5, 5);
        b.set_rgb(5, 5, v.map(|c| 1.0 - c));
        let s = ssim(&a, &b).unwrap();
        assert!(s > 0.0 && s < 1.0);
        assert!(matches!(ssim(&random_frame(3, 10, 16), &random_frame(4, 10, 16)), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn smoothness_guards() {
        let still = VideoTensor::filled(5, 4, 4, 3, 0.3);
        assert_eq!(orbit_smoothness(&still).unwrap(), Smoothness { ratio: 0.0, static_video: true });
        assert!(matches!(orbit_smoothness(&VideoTensor::zeros(3, 4, 4, 3)), Err(Error::TooFewFrames { .. })));
        assert!(matches!(canonical_staticity(&VideoTensor::zeros(1, 4, 4, 3)), Err(Error::TooFewFrames { .. })));
        assert_eq!(canonical_staticity(&still).unwrap(), 0.0);
    }
}
