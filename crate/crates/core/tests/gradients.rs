mod common;

use rcm_core::denoiser::{CameraMode, DenoiserConfig};

fn assert_exact(config: &DenoiserConfig) {
    let report = common::gradient_check(config, 7);
    assert!(!report.is_empty());
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    println!("worst per-tensor relative error over {} tensors: {worst:e}", report.len());
    for (name, err) in &report {
        assert!(*err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn additive_camera_gradients_match_finite_differences() {
    assert_exact(&DenoiserConfig::tiny());
}

#[test]
fn cross_attention_gradients_match_finite_differences() {
    assert_exact(&DenoiserConfig { camera_mode: CameraMode::CrossAttention, ..DenoiserConfig::tiny() });
}

#[test]
fn gradients_without_position_encodings() {
    assert_exact(&DenoiserConfig { positional: false, blocks: 2, ..DenoiserConfig::tiny() });
}
