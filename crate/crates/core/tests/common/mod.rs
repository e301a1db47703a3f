#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcm_core::camera::{orbit_pose, plucker_embedding, PluckerGrid};
use rcm_core::denoiser::{loss_and_grad, DenoiserConfig, DenoiserInput, ModelParams};
use rcm_core::flow::Timestep;
use rcm_core::tensor::VideoTensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn orbit_grids(frames: usize, hw: usize) -> Vec<PluckerGrid> {
    (0..frames)
        .map(|i| {
            let pose = orbit_pose(4.0, 0.3, 0.4 + 0.7 * i as f64, hw as f64, (hw, hw)).unwrap();
            plucker_embedding(&pose).unwrap()
        })
        .collect()
}

/// Largest per-tensor relative error between analytic and central-difference
/// gradients: `max|a − n| / max(max|a|, max|n|, 1e-8)` over each tensor.
pub fn gradient_check(config: &DenoiserConfig, seed: u64) -> Vec<(String, f64)> {
    let mut params = ModelParams::init_with_camera(config, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 1);
    for (_, t) in params.named_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
    let (frames, hw) = (2, 8);
    let x = VideoTensor::randn([frames, hw, hw, config.channels], &mut r);
    let refs = VideoTensor::randn([2, hw, hw, config.channels], &mut r);
    let target = VideoTensor::randn([frames, hw, hw, config.channels], &mut r);
    let cams = orbit_grids(frames, hw);
    let t = Timestep::new(r.gen_range(0.0..1.0)).unwrap();
    let loss = |p: &ModelParams| {
        let input = DenoiserInput { x_t: &x, t, cameras: Some(&cams), references: &refs };
        loss_and_grad(p, &input, &target).unwrap()
    };
    let (_, grads) = loss(&params);
    let analytic: Vec<(String, Vec<f64>)> =
        grads.named().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect();

    let h = 1e-4;
    let mut report = Vec::new();
    for (idx, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for k in 0..a.len() {
            let mut plus = params.clone();
            plus.named_mut()[idx].1.data_mut()[k] += h;
            let mut minus = params.clone();
            minus.named_mut()[idx].1.data_mut()[k] -= h;
            numeric.push((loss(&plus).0 - loss(&minus).0) / (2.0 * h));
        }
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(1e-8, f64::max);
        report.push((name.clone(), diff / scale));
    }
    report
}
