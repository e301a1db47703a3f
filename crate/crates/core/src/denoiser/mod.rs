//! The velocity network: patch tokens for the noisy video and its reference
//! images, camera latents from Plücker grids, and a stack of factorized
//! spatial/temporal attention blocks. Gradients are computed by hand.

mod model;
mod params;

pub use model::{
    assemble_patches, assemble_sequence, backward, camera_encoder, extract_patches, forward, forward_sequence,
    from_model_space, loss_and_grad, patchify, to_model_space, unpatchify, DenoiserInput, ForwardCache,
    SequenceLayout, TokenSequence, MAX_REFERENCES,
};
pub use params::{
    Attention, Block, CameraEncoder, CameraMode, CrossAttention, DenoiserConfig, FeedForward, ModelParams,
    CAMERA_PREFIX,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{orbit_pose, plucker_embedding, PluckerGrid};
    use crate::error::Error;
    use crate::flow::Timestep;
    use crate::nn::Linear;
    use crate::tensor::{Tensor, VideoTensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn grids(frames: usize, hw: usize, azimuth0: f64) -> Vec<PluckerGrid> {
        (0..frames)
            .map(|i| {
                let pose = orbit_pose(4.0, 0.2, azimuth0 + 0.3 * i as f64, hw as f64, (hw, hw)).unwrap();
                plucker_embedding(&pose).unwrap()
            })
            .collect()
    }

    fn randomize(p: &mut ModelParams, seed: u64) {
        let mut r = rng(seed);
        for (_, t) in p.named_mut() {
            for v in t.data_mut() {
                *v = r.gen_range(-0.5..0.5);
            }
        }
    }

    struct Case {
        x: VideoTensor,
        refs: VideoTensor,
        cams: Vec<PluckerGrid>,
    }

    fn case(frames: usize, refs: usize, hw: usize, seed: u64) -> Case {
        let mut r = rng(seed);
        Case {
            x: VideoTensor::randn([frames, hw, hw, 3], &mut r),
            refs: VideoTensor::randn([refs, hw, hw, 3], &mut r),
            cams: grids(frames, hw, 0.1),
        }
    }

    fn t(v: f64) -> Timestep {
        Timestep::new(v).unwrap()
    }

    #[test]
    fn patch_grid_arithmetic_and_round_trip() {
        let p = ModelParams::init(&DenoiserConfig::default(), &mut rng(1)).unwrap();
        let v = VideoTensor::randn([2, 32, 32, 3], &mut rng(2));
        let tokens = patchify(&v, 4, &p.patch).unwrap();
        assert_eq!(tokens.shape(), &[2 * 64, 64]);
        let back = unpatchify(&tokens, &p.unpatch, v.dims(), 4).unwrap();
        assert_eq!(back.dims(), v.dims());

        // With an identity embedding and unembedding the round trip is exact.
        let k = 4 * 4 * 3;
        let mut eye = vec![0.0; k * k];
        for i in 0..k {
            eye[i * k + i] = 1.0;
        }
        let id = Linear::new(Tensor::from_vec(&[k, k], eye).unwrap(), Tensor::zeros(&[k]));
        let exact = unpatchify(&patchify(&v, 4, &id).unwrap(), &id, v.dims(), 4).unwrap();
        assert_eq!(exact, v);

        let odd = VideoTensor::zeros(1, 30, 32, 3);
        assert!(matches!(patchify(&odd, 4, &p.patch), Err(Error::IndivisibleResolution { .. })));
    }

    #[test]
    fn camera_encoder_contracts() {
        let mut p = ModelParams::init_with_camera(&DenoiserConfig::tiny(), &mut rng(3)).unwrap();
        let g1 = grids(2, 8, 0.0);
        let g2 = grids(2, 8, 1.0);
        let enc = p.camera.as_ref().unwrap();
        let lat = camera_encoder(&g1, enc, 4).unwrap();
        assert_eq!(lat.shape(), &[2 * 4, 8]);
        assert!(lat.data().iter().all(|&v| v == 0.0));

        let proj = &mut p.camera.as_mut().unwrap().proj;
        *proj = Linear::new(Tensor::filled(&[8, 8], 0.1), Tensor::zeros(&[8]));
        let enc = p.camera.as_ref().unwrap();
        let a = camera_encoder(&g1, enc, 4).unwrap();
        let b = camera_encoder(&g2, enc, 4).unwrap();
        assert!(a.max_abs_diff(&b) > 0.0);

        let wrong = grids(1, 12, 0.0);
        assert!(matches!(camera_encoder(&[g1[0].clone(), wrong[0].clone()], enc, 4), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sequence_layout_and_summation() {
        let config = DenoiserConfig::default();
        let p = ModelParams::init_with_camera(&config, &mut rng(4)).unwrap();
        let video = Tensor::randn(&[16 * 64, 64], 1.0, &mut rng(5));
        let refs = Tensor::randn(&[2 * 64, 64], 1.0, &mut rng(6));
        let zero = Tensor::zeros(&[16 * 64, 64]);
        let with = assemble_sequence(&video, Some(&zero), &refs, t(0.3), &p, (8, 8)).unwrap();
        let without = assemble_sequence(&video, None, &refs, t(0.3), &p, (8, 8)).unwrap();
        assert_eq!(with.tokens, without.tokens);
        assert_eq!(with.tokens.shape(), &[1152, 64]);
        assert_eq!(with.loss_mask.iter().filter(|&&m| m).count(), 1024);
        assert!(with.loss_mask[..1024].iter().all(|&m| m));
        assert!(with.loss_mask[1024..].iter().all(|&m| !m));

        // Changing reference tokens touches only the last R·G rows.
        let refs2 = Tensor::randn(&[2 * 64, 64], 1.0, &mut rng(7));
        let other = assemble_sequence(&video, None, &refs2, t(0.3), &p, (8, 8)).unwrap();
        let d = 64;
        for row in 0..1152 {
            let same = with.tokens.data()[row * d..(row + 1) * d] == other.tokens.data()[row * d..(row + 1) * d];
            assert_eq!(same, row < 1024, "row {row}");
        }

        let five = Tensor::zeros(&[5 * 64, 64]);
        assert!(matches!(
            assemble_sequence(&video, None, &five, t(0.3), &p, (8, 8)),
            Err(Error::TooManyReferences { count: 5 })
        ));
        let bad_cam = Tensor::zeros(&[15 * 64, 64]);
        assert!(matches!(
            assemble_sequence(&video, Some(&bad_cam), &refs, t(0.3), &p, (8, 8)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn forward_shape_and_determinism() {
        let p = ModelParams::init_with_camera(&DenoiserConfig::tiny(), &mut rng(8)).unwrap();
        let c = case(3, 2, 8, 9);
        let input = DenoiserInput { x_t: &c.x, t: t(0.5), cameras: Some(&c.cams), references: &c.refs };
        let a = forward(&p, &input).unwrap();
        let b = forward(&p, &input).unwrap();
        assert_eq!(a.dims(), c.x.dims());
        assert_eq!(a, b);
        let (full, _) = forward_sequence(&p, &input).unwrap();
        assert_eq!(full.frames(), 5);
        assert_eq!(&full.data()[..a.data().len()], a.data());
    }

    #[test]
    fn reference_order_only_matters_through_positions() {
        let config = DenoiserConfig { positional: false, ..DenoiserConfig::tiny() };
        let mut p = ModelParams::init(&config, &mut rng(10)).unwrap();
        randomize(&mut p, 11);
        let c = case(2, 2, 8, 12);
        let swapped = {
            let mut data = c.refs.frame(1).to_vec();
            data.extend_from_slice(c.refs.frame(0));
            VideoTensor::from_vec(c.refs.dims(), data).unwrap()
        };
        let run = |refs: &VideoTensor, p: &ModelParams| {
            forward(p, &DenoiserInput { x_t: &c.x, t: t(0.4), cameras: None, references: refs }).unwrap()
        };
        assert!(run(&c.refs, &p).max_abs_diff(&run(&swapped, &p)) < 1e-12);

        let mut positional = p.clone();
        positional.config.positional = true;
        assert!(run(&c.refs, &positional).max_abs_diff(&run(&swapped, &positional)) > 1e-9);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut p = ModelParams::init_with_camera(&DenoiserConfig::tiny(), &mut rng(13)).unwrap();
        randomize(&mut p, 14);
        let c = case(2, 1, 8, 15);
        let input = DenoiserInput { x_t: &c.x, t: t(0.7), cameras: Some(&c.cams), references: &c.refs };
        let (out, cache) = forward_sequence(&p, &input).unwrap();
        let g = backward(&p, &cache, &out.map(|_| 0.0)).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn masked_reference_targets_do_not_change_gradients() {
        let mut p = ModelParams::init_with_camera(&DenoiserConfig::tiny(), &mut rng(16)).unwrap();
        randomize(&mut p, 17);
        let c = case(2, 2, 8, 18);
        let input = DenoiserInput { x_t: &c.x, t: t(0.2), cameras: Some(&c.cams), references: &c.refs };
        let (out, cache) = forward_sequence(&p, &input).unwrap();
        let mask = cache.layout().frame_mask();
        let mut r = rng(19);
        let target = VideoTensor::randn(out.dims(), &mut r);
        let mut perturbed = target.clone();
        for f in 2..4 {
            for v in perturbed.frame_mut(f) {
                *v += r.gen_range(-5.0..5.0);
            }
        }
        let grad_for = |target: &VideoTensor| {
            let (_, d) = crate::flow::fm_loss_with_grad(&out, target, Some(&mask)).unwrap();
            backward(&p, &cache, &d).unwrap()
        };
        assert_eq!(grad_for(&target), grad_for(&perturbed));
    }

    #[test]
    fn zero_camera_projection_is_neutral() {
        for mode in [CameraMode::Add, CameraMode::CrossAttention] {
            let config = DenoiserConfig { camera_mode: mode, ..DenoiserConfig::tiny() };
            let p = ModelParams::init_with_camera(&config, &mut rng(20)).unwrap();
            let c = case(2, 1, 8, 21);
            let other = grids(2, 8, 2.0);
            let run = |cams: Option<&[PluckerGrid]>| {
                forward(&p, &DenoiserInput { x_t: &c.x, t: t(0.6), cameras: cams, references: &c.refs }).unwrap()
            };
            let none = run(None);
            assert_eq!(none, run(Some(&c.cams)));
            assert_eq!(none, run(Some(&other)));
        }
    }

    #[test]
    fn camera_modes() {
        let c = case(2, 1, 8, 22);
        let base = DenoiserConfig::tiny();
        let mut add = ModelParams::init_with_camera(&base, &mut rng(23)).unwrap();
        let proj = &mut add.camera.as_mut().unwrap().proj;
        *proj = Linear::new(Tensor::randn(&[8, 8], 0.5, &mut rng(24)), Tensor::zeros(&[8]));
        let input = DenoiserInput { x_t: &c.x, t: t(0.5), cameras: Some(&c.cams), references: &c.refs };
        let explicit = ModelParams { config: DenoiserConfig { camera_mode: "add".parse().unwrap(), ..base.clone() }, ..add.clone() };
        assert_eq!(forward(&add, &input).unwrap(), forward(&explicit, &input).unwrap());

        let cross_cfg = DenoiserConfig { camera_mode: CameraMode::CrossAttention, ..base };
        let mut cross = ModelParams::init_with_camera(&cross_cfg, &mut rng(23)).unwrap();
        let proj = &mut cross.camera.as_mut().unwrap().proj;
        *proj = Linear::new(Tensor::randn(&[8, 8], 0.5, &mut rng(24)), Tensor::zeros(&[8]));
        let with = forward(&cross, &input).unwrap();
        let without = forward(&cross, &DenoiserInput { cameras: None, ..input }).unwrap();
        assert!(with.max_abs_diff(&without) > 0.0);
        assert!(matches!("ip_adapter".parse::<CameraMode>(), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn references_influence_video_predictions() {
        let p = ModelParams::init(&DenoiserConfig::tiny(), &mut rng(25)).unwrap();
        let c = case(2, 1, 8, 26);
        let other = VideoTensor::randn([1, 8, 8, 3], &mut rng(27));
        let run = |refs: &VideoTensor| {
            forward(&p, &DenoiserInput { x_t: &c.x, t: t(0.5), cameras: None, references: refs }).unwrap()
        };
        assert!(run(&c.refs).max_abs_diff(&run(&other)) > 0.0);
    }

    #[test]
    fn bounded_inputs_give_finite_outputs_at_init() {
        let p = ModelParams::init_with_camera(&DenoiserConfig::default(), &mut rng(28)).unwrap();
        let x = VideoTensor::filled(2, 16, 16, 3, 10.0);
        let refs = VideoTensor::filled(1, 16, 16, 3, -10.0);
        let cams = grids(2, 16, 0.0);
        for tv in [0.0, 0.5, 1.0] {
            let out = forward(&p, &DenoiserInput { x_t: &x, t: t(tv), cameras: Some(&cams), references: &refs }).unwrap();
            assert!(out.is_finite());
        }
    }

    #[test]
    fn input_validation() {
        let p = ModelParams::init(&DenoiserConfig::tiny(), &mut rng(29)).unwrap();
        let c = case(2, 1, 8, 30);
        let five = VideoTensor::zeros(5, 8, 8, 3);
        let input = DenoiserInput { x_t: &c.x, t: t(0.5), cameras: None, references: &five };
        assert!(matches!(forward(&p, &input), Err(Error::TooManyReferences { count: 5 })));
        let input = DenoiserInput { x_t: &c.x, t: t(0.5), cameras: Some(&c.cams), references: &c.refs };
        assert!(forward(&p, &input).is_err());
    }
}
