//! Stage-specific supervision pairs built from a pool of procedural characters.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{default_focal, orbit_pose, orbit_trajectory, sample_viewpoint, CameraPose, Viewpoint, ViewpointRange};
use crate::error::{Error, Result};
use crate::scene::background::make_background;
use crate::scene::character::{make_character_with_stats, CharacterSpec, PoseParams, RejectReason, Style};
use crate::scene::render::{composite_background, render, Background};
use crate::tensor::{Frame, VideoTensor};

pub const MAX_CONDITIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub style: Style,
    pub viewpoints: ViewpointRange,
    /// Distance of the fixed frontal camera used for Stage I targets.
    pub canonical_distance: f64,
    /// Flat color behind every target video.
    pub target_background: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 32,
            width: 32,
            frames: 16,
            style: Style::default(),
            viewpoints: ViewpointRange::default(),
            canonical_distance: 5.0,
            target_background: [0.5, 0.5, 0.5],
        }
    }
}

impl SceneConfig {
    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn focal(&self) -> f64 {
        default_focal(self.resolution())
    }

    pub fn frontal_camera(&self) -> Result<CameraPose> {
        orbit_pose(self.canonical_distance, 0.0, 0.0, self.focal(), self.resolution())
    }

    /// Canonical-pose render over the target background.
    pub fn oracle_render(&self, spec: &CharacterSpec, camera: &CameraPose) -> Result<Frame> {
        render(spec, &PoseParams::canonical(), camera, &Background::Flat(self.target_background))
    }

    /// Canonical-pose orbit of `frames` views starting at `start`.
    pub fn oracle_orbit(&self, spec: &CharacterSpec, start: &Viewpoint) -> Result<(Vec<CameraPose>, VideoTensor)> {
        let cams = orbit_trajectory(
            self.frames,
            start.distance,
            start.elevation,
            start.azimuth,
            self.focal(),
            self.resolution(),
        )?;
        let frames = cams
            .iter()
            .map(|c| self.oracle_render(spec, c))
            .collect::<Result<Vec<_>>>()?;
        Ok((cams, VideoTensor::from_frames(&frames)?))
    }

    /// Canonical-pose static video: `frames` copies of one view.
    pub fn oracle_static(&self, spec: &CharacterSpec, camera: &CameraPose) -> Result<VideoTensor> {
        let f = self.oracle_render(spec, camera)?;
        VideoTensor::from_frames(&vec![f; self.frames])
    }
}

/// A fixed set of characters plus, per character, the three dataset
/// viewpoints: one horizontal (zero elevation) and two random.
#[derive(Clone, Debug)]
pub struct CharacterPool {
    pub characters: Vec<CharacterSpec>,
    pub viewpoints: Vec<[Viewpoint; 3]>,
    pub rejections: Vec<RejectReason>,
}

impl CharacterPool {
    pub fn new(seed_base: u64, count: usize, style: Style, range: &ViewpointRange) -> Result<Self> {
        Self::from_seeds((0..count as u64).map(|i| seed_base.wrapping_add(i)), style, range)
    }

    pub fn from_seeds(seeds: impl IntoIterator<Item = u64>, style: Style, range: &ViewpointRange) -> Result<Self> {
        let mut pool = CharacterPool {
            characters: Vec::new(),
            viewpoints: Vec::new(),
            rejections: Vec::new(),
        };
        for seed in seeds {
            let (spec, rejected) = make_character_with_stats(seed, style)?;
            pool.rejections.extend(rejected);
            pool.viewpoints.push(dataset_viewpoints(seed, range)?);
            pool.characters.push(spec);
        }
        if pool.characters.is_empty() {
            return Err(Error::InvalidArgument("character pool is empty".into()));
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }
}

pub fn dataset_viewpoints(seed: u64, range: &ViewpointRange) -> Result<[Viewpoint; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_C0FFEE);
    let mut horizontal = sample_viewpoint(&mut rng, range)?;
    horizontal.elevation = 0.0;
    Ok([horizontal, sample_viewpoint(&mut rng, range)?, sample_viewpoint(&mut rng, range)?])
}

#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub stage: Stage,
    pub character_seed: u64,
    pub condition_images: Vec<Frame>,
    pub condition_poses: Vec<PoseParams>,
    pub viewpoint: Option<Viewpoint>,
    pub target_video: VideoTensor,
    camera_trajectory: Option<Vec<CameraPose>>,
    probe: Option<Arc<AtomicUsize>>,
}

impl TrainingSample {
    pub fn new(
        stage: Stage,
        character_seed: u64,
        condition_images: Vec<Frame>,
        camera_trajectory: Option<Vec<CameraPose>>,
        target_video: VideoTensor,
    ) -> Result<Self> {
        let count = condition_images.len();
        if count == 0 {
            return Err(Error::InvalidArgument("a sample needs at least one condition image".into()));
        }
        if count > MAX_CONDITIONS {
            return Err(Error::TooManyReferences { count });
        }
        if let Some(t) = &camera_trajectory {
            if t.len() != target_video.frames() {
                return Err(Error::shape(&[target_video.frames()], &[t.len()]));
            }
        }
        Ok(TrainingSample {
            stage,
            character_seed,
            condition_poses: vec![PoseParams::canonical(); count],
            condition_images,
            viewpoint: None,
            target_video,
            camera_trajectory,
            probe: None,
        })
    }

    pub fn condition_count(&self) -> usize {
        self.condition_images.len()
    }

    /// Per-frame cameras; absent for Stage I. Every call is counted by an
    /// attached probe.
    pub fn camera_trajectory(&self) -> Option<&[CameraPose]> {
        if let Some(p) = &self.probe {
            p.fetch_add(1, Ordering::SeqCst);
        }
        self.camera_trajectory.as_deref()
    }

    pub fn attach_probe(&mut self, probe: Arc<AtomicUsize>) {
        self.probe = Some(probe);
    }
}

/// One condition view: random body pose, random camera, random background.
pub fn condition_image<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &CharacterSpec,
    config: &SceneConfig,
) -> Result<(Frame, PoseParams)> {
    let (h, w) = config.resolution();
    let pose = PoseParams::random(rng);
    let cam = sample_viewpoint(rng, &config.viewpoints)?.pose(config.focal(), (h, w))?;
    let bg = make_background(rng, h, w);
    let fg = render(spec, &pose, &cam, &Background::Flat([0.0; 3]))?;
    Ok((composite_background(&fg, &bg)?, pose))
}

pub fn make_training_sample<R: Rng + ?Sized>(
    stage: Stage,
    rng: &mut R,
    pool: &CharacterPool,
    config: &SceneConfig,
) -> Result<TrainingSample> {
    let idx = rng.gen_range(0..pool.len());
    let spec = &pool.characters[idx];
    let (h, w) = config.resolution();
    let focal = config.focal();

    let count = rng.gen_range(1..=MAX_CONDITIONS);
    let mut condition_images = Vec::with_capacity(count);
    let mut condition_poses = Vec::with_capacity(count);
    for _ in 0..count {
        let (image, pose) = condition_image(rng, spec, config)?;
        condition_images.push(image);
        condition_poses.push(pose);
    }

    let (trajectory, target, viewpoint) = match stage {
        Stage::I => {
            let cam = config.frontal_camera()?;
            (None, config.oracle_static(spec, &cam)?, None)
        }
        Stage::II | Stage::III => {
            let vp = pool.viewpoints[idx][rng.gen_range(0..3)];
            if stage == Stage::II {
                let cam = vp.pose(focal, (h, w))?;
                let video = config.oracle_static(spec, &cam)?;
                (Some(vec![cam; config.frames]), video, Some(vp))
            } else {
                let (cams, video) = config.oracle_orbit(spec, &vp)?;
                (Some(cams), video, Some(vp))
            }
        }
    };

    let mut sample = TrainingSample::new(stage, spec.seed, condition_images, trajectory, target)?;
    sample.condition_poses = condition_poses;
    sample.viewpoint = viewpoint;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::orbit_pose;
    use std::f64::consts::PI;

    fn small_config() -> SceneConfig {
        SceneConfig {
            frames: 16,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn static_stage_targets() {
        let pool = CharacterPool::new(100, 4, Style::default(), &ViewpointRange::default()).unwrap();
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stage in [Stage::I, Stage::II] {
            let s = make_training_sample(stage, &mut rng, &pool, &cfg).unwrap();
            let v = &s.target_video;
            assert_eq!(v.frame(0), v.frame(v.frames() - 1));
            for i in 1..v.frames() {
                assert_eq!(v.frame(i), v.frame(0));
            }
            assert_eq!(s.camera_trajectory().is_some(), stage == Stage::II);
        }
    }

    #[test]
    fn orbit_target_half_turn_frame() {
        let pool = CharacterPool::new(7, 1, Style::default(), &ViewpointRange::default()).unwrap();
        let cfg = SceneConfig {
            viewpoints: ViewpointRange {
                elevation_min: 0.0,
                elevation_max: 0.0,
                ..ViewpointRange::default()
            },
            ..small_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = make_training_sample(Stage::III, &mut rng, &pool, &cfg).unwrap();
        let vp = s.viewpoint.unwrap();
        let cam = orbit_pose(vp.distance, vp.elevation, vp.azimuth + PI, cfg.focal(), cfg.resolution()).unwrap();
        let oracle = cfg.oracle_render(&pool.characters[0], &cam).unwrap();
        let frame8 = s.target_video.to_frame(8).unwrap();
        assert!(frame8.max_abs_diff(&oracle) <= 1e-12);
        assert_eq!(s.camera_trajectory().unwrap().len(), 16);
    }

    #[test]
    fn condition_counts_cover_one_to_four() {
        let pool = CharacterPool::new(0, 2, Style::default(), &ViewpointRange::default()).unwrap();
        let cfg = SceneConfig {
            height: 8,
            width: 8,
            frames: 2,
            ..SceneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; MAX_CONDITIONS + 1];
        for _ in 0..10_000 {
            counts[make_training_sample(Stage::I, &mut rng, &pool, &cfg).unwrap().condition_count()] += 1;
        }
        assert_eq!(counts[0], 0);
        assert!(counts[1..].iter().all(|&c| c > 2000), "{counts:?}");
    }

    #[test]
    fn conditions_differ_from_targets() {
        let pool = CharacterPool::new(40, 8, Style::default(), &ViewpointRange::default()).unwrap();
        let cfg = SceneConfig {
            frames: 2,
            ..SceneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for k in 0..1000 {
            let stage = [Stage::I, Stage::II, Stage::III][k % 3];
            let s = make_training_sample(stage, &mut rng, &pool, &cfg).unwrap();
            let target = s.target_video.to_frame(0).unwrap();
            for c in &s.condition_images {
                assert!(c.max_abs_diff(&target) > 0.0);
            }
        }
    }

    #[test]
    fn samples_replay_from_seed() {
        let pool = CharacterPool::new(5, 3, Style::default(), &ViewpointRange::default()).unwrap();
        let cfg = SceneConfig {
            frames: 4,
            ..SceneConfig::default()
        };
        let a = make_training_sample(Stage::III, &mut ChaCha8Rng::seed_from_u64(8), &pool, &cfg).unwrap();
        let b = make_training_sample(Stage::III, &mut ChaCha8Rng::seed_from_u64(8), &pool, &cfg).unwrap();
        assert_eq!(a.target_video, b.target_video);
        assert_eq!(a.condition_images, b.condition_images);
    }

    #[test]
    fn probe_counts_trajectory_reads() {
        let pool = CharacterPool::new(5, 1, Style::default(), &ViewpointRange::default()).unwrap();
        let cfg = SceneConfig {
            frames: 2,
            ..SceneConfig::default()
        };
        let mut s = make_training_sample(Stage::II, &mut ChaCha8Rng::seed_from_u64(1), &pool, &cfg).unwrap();
        let probe = Arc::new(AtomicUsize::new(0));
        s.attach_probe(probe.clone());
        let _ = s.camera_trajectory();
        let _ = s.camera_trajectory();
        assert_eq!(probe.load(Ordering::SeqCst), 2);
    }
}
