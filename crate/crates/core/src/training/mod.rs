//! Staged training: Stage I canonicalization without camera input, Stage II
//! camera-encoder warmup followed by joint fine-tuning, Stage III orbits, and
//! a single-stage joint arm trained on orbit data from scratch.

mod adam;
mod checkpoint;
mod data;

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, FreezeMask};
pub use checkpoint::{checkpoint_load, checkpoint_save, CheckpointManifest, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use data::{
    read_shard_manifest, write_shard, DataSource, RejectionStats, ShardEntry, ShardManifest, ShardSource, ShardSpec,
    SyntheticSource, SHARD_FORMAT, SHARD_VERSION,
};

use crate::camera::{plucker_embedding, PluckerGrid};
use crate::denoiser::{loss_and_grad, to_model_space, DenoiserInput, ModelParams, CAMERA_PREFIX};
use crate::error::{Error, Result};
use crate::flow::{interpolate, sample_timestep, velocity_target, Expert, ExpertSplit, Timestep};
use crate::scene::{Stage, TrainingSample};
use crate::tensor::VideoTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageKind {
    I,
    II,
    III,
    /// All objectives at once: samples from every stage's data, mixed by
    /// `joint_mix`, with the camera encoder present from the first step.
    #[serde(rename = "IIIa", alias = "joint")]
    Joint,
}

impl StageKind {
    pub fn data_stage(self) -> Stage {
        match self {
            StageKind::I => Stage::I,
            StageKind::II => Stage::II,
            StageKind::III | StageKind::Joint => Stage::III,
        }
    }

    pub fn uses_camera(self) -> bool {
        self != StageKind::I
    }

    pub fn label(self) -> &'static str {
        match self {
            StageKind::I => "I",
            StageKind::II => "II",
            StageKind::III => "III",
            StageKind::Joint => "joint",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn expert_label(e: Expert) -> &'static str {
    match e {
        Expert::Low => "low",
        Expert::High => "high",
        Expert::Any => "any",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub stage: StageKind,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub expert: Expert,
    /// Camera-encoder-only steps at the start of Stage II; a quarter of the
    /// stage when unset.
    pub freeze_phase_steps: Option<usize>,
    pub seed: u64,
    pub grad_clip: f64,
    pub split: ExpertSplit,
    /// Relative weights of Stage I, II and III samples in a joint stage.
    pub joint_mix: [usize; 3],
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::new(StageKind::I, 200, 1)
    }
}

impl StageConfig {
    pub fn new(stage: StageKind, steps: usize, seed: u64) -> Self {
        StageConfig {
            stage,
            steps,
            batch_size: 4,
            lr: 2e-3,
            expert: Expert::Any,
            freeze_phase_steps: None,
            seed,
            grad_clip: 1.0,
            split: ExpertSplit::default(),
            joint_mix: [1, 1, 2],
        }
    }

    pub fn freeze_steps(&self) -> usize {
        match self.stage {
            StageKind::II => self.freeze_phase_steps.unwrap_or(self.steps / 4).min(self.steps),
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("steps and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.grad_clip > 0.0) {
            return Err(Error::InvalidArgument("lr and grad_clip must be positive".into()));
        }
        if self.stage == StageKind::Joint && self.joint_mix.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidArgument("joint_mix needs a positive weight".into()));
        }
        self.split.validate()
    }

    /// Trainable tensors at `step` (0-based) of this stage.
    pub fn mask_at(&self, params: &ModelParams, step: usize) -> FreezeMask {
        match self.stage {
            StageKind::I => FreezeMask::backbone_only(params),
            StageKind::II if step < self.freeze_steps() => FreezeMask::camera_only(params),
            _ => FreezeMask::all(params),
        }
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub stage: String,
    pub expert: String,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step,stage,expert,loss,grad_norm,lr";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.stage, r.expert, r.loss, r.grad_norm, r.lr));
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::FormatViolation("metrics header".into()));
    }
    let bad = |l: &str| Error::FormatViolation(format!("metrics row {l:?}"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(l));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(l));
            Ok(MetricRow {
                step: f[0].parse().map_err(|_| bad(l))?,
                stage: f[1].to_string(),
                expert: f[2].to_string(),
                loss: num(f[3])?,
                grad_norm: num(f[4])?,
                lr: num(f[5])?,
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Position within a stage schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub stage_index: usize,
    /// Completed steps in the current stage.
    pub step: usize,
    pub global_step: usize,
    /// Samples drawn in the current stage.
    pub data_cursor: u64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub rng: ChaCha8Rng,
    pub progress: Progress,
    pub metrics: Vec<MetricRow>,
    /// Steps whose gradient norm exceeded the clip threshold.
    pub clip_events: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, stages: &[StageConfig]) -> Result<Self> {
        let first = stages.first().ok_or_else(|| Error::InvalidArgument("empty stage schedule".into()))?;
        let mut state = TrainState {
            optimizer: AdamState::new(&params),
            params,
            rng: ChaCha8Rng::seed_from_u64(first.seed),
            progress: Progress::default(),
            metrics: Vec::new(),
            clip_events: 0,
        };
        state.enter_stage(0, first);
        Ok(state)
    }

    fn enter_stage(&mut self, index: usize, config: &StageConfig) {
        if config.stage.uses_camera() {
            // Separate stream so adding the encoder does not shift the loop RNG.
            let mut init = ChaCha8Rng::seed_from_u64(config.seed ^ 0xCA3E_7A00);
            self.params.attach_camera(&mut init);
        }
        self.optimizer = AdamState::new(&self.params);
        self.rng = ChaCha8Rng::seed_from_u64(config.seed);
        self.progress.stage_index = index;
        self.progress.step = 0;
        self.progress.data_cursor = 0;
    }
}

pub trait TrainObserver {
    fn on_step(&mut self, _row: &MetricRow) -> Result<()> {
        Ok(())
    }

    /// Called after stage `index` completes; `state` already points at the
    /// start of the next stage (or past the end of the schedule).
    fn on_stage_end(&mut self, _index: usize, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Network inputs derived from one training sample.
pub struct PreparedSample {
    pub x_t: VideoTensor,
    pub v_target: VideoTensor,
    pub t: Timestep,
    pub references: VideoTensor,
    pub cameras: Option<Vec<PluckerGrid>>,
}

/// Draws noise and a timestep and builds the interpolated input. Stage I
/// never reads the sample's camera trajectory.
pub fn prepare_sample(
    sample: &TrainingSample,
    stage: StageKind,
    expert: Expert,
    split: &ExpertSplit,
    rng: &mut ChaCha8Rng,
) -> Result<PreparedSample> {
    let x0 = to_model_space(&sample.target_video);
    let references = to_model_space(&VideoTensor::from_frames(&sample.condition_images)?);
    let cameras = if stage.uses_camera() && sample.stage != Stage::I {
        let traj = sample
            .camera_trajectory()
            .ok_or_else(|| Error::InvalidArgument(format!("stage {stage} needs camera trajectories")))?;
        let mut grids: Vec<PluckerGrid> = Vec::with_capacity(traj.len());
        for (i, pose) in traj.iter().enumerate() {
            let repeat = i > 0 && *pose == traj[i - 1];
            grids.push(if repeat { grids[i - 1].clone() } else { plucker_embedding(pose)? });
        }
        Some(grids)
    } else {
        None
    };
    let x1 = VideoTensor::randn(x0.dims(), rng);
    let t = sample_timestep(rng, expert, split)?;
    Ok(PreparedSample {
        x_t: interpolate(&x0, &x1, t)?,
        v_target: velocity_target(&x0, &x1)?,
        t,
        references,
        cameras,
    })
}

/// Mean loss and gradient over a batch. Per-sample work runs in parallel;
/// the reduction order is fixed so results do not depend on thread count.
pub fn batch_loss_and_grad(params: &ModelParams, batch: &[PreparedSample]) -> Result<(f64, ModelParams)> {
    let results: Vec<Result<(f64, ModelParams)>> = batch
        .par_iter()
        .map(|p| {
            let input = DenoiserInput {
                x_t: &p.x_t,
                t: p.t,
                cameras: p.cameras.as_deref(),
                references: &p.references,
            };
            loss_and_grad(params, &input, &p.v_target)
        })
        .collect();
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for r in results {
        let (loss, g) = r?;
        total += loss;
        grads.axpy(1.0 / n, &g)?;
    }
    Ok((total / n, grads))
}

fn masked_norm(grads: &ModelParams, mask: &FreezeMask) -> f64 {
    grads
        .named()
        .iter()
        .zip(&mask.trainable)
        .filter(|(_, &t)| t)
        .flat_map(|((_, t), _)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn joint_data_stage(mix: &[usize; 3], rng: &mut ChaCha8Rng) -> Stage {
    let mut r = rng.gen_range(0..mix.iter().sum::<usize>());
    for (w, stage) in mix.iter().zip([Stage::I, Stage::II, Stage::III]) {
        if r < *w {
            return stage;
        }
        r -= w;
    }
    unreachable!("weights sum past the draw")
}

fn train_step(config: &StageConfig, state: &mut TrainState, source: &mut dyn DataSource) -> Result<()> {
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let data_stage = match config.stage {
            StageKind::Joint => joint_data_stage(&config.joint_mix, &mut state.rng),
            kind => kind.data_stage(),
        };
        let sample = source.sample(data_stage, state.progress.data_cursor, &mut state.rng)?;
        state.progress.data_cursor += 1;
        batch.push(prepare_sample(&sample, config.stage, config.expert, &config.split, &mut state.rng)?);
    }
    let step = state.progress.global_step;
    let (loss, mut grads) = batch_loss_and_grad(&state.params, &batch)
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
            other => other,
        })?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step}")));
    }
    let mask = config.mask_at(&state.params, state.progress.step);
    let grad_norm = masked_norm(&grads, &mask);
    if grad_norm > config.grad_clip {
        grads.scale(config.grad_clip / grad_norm);
        state.clip_events += 1;
    }
    adam_step(&mut state.params, &grads, &mut state.optimizer, config.lr, &mask)
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
            other => other,
        })?;
    state.progress.step += 1;
    state.progress.global_step += 1;
    state.metrics.push(MetricRow {
        step: state.progress.global_step,
        stage: config.stage.label().to_string(),
        expert: expert_label(config.expert).to_string(),
        loss,
        grad_norm,
        lr: config.lr,
    });
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Finished,
    /// Stopped at the requested global step; the state can be checkpointed
    /// and resumed.
    Paused,
}

/// Runs (or continues) `stages` from `state`, optionally stopping once
/// `stop_at` global steps have completed.
pub fn run_schedule(
    stages: &[StageConfig],
    state: &mut TrainState,
    source: &mut dyn DataSource,
    observer: &mut dyn TrainObserver,
    stop_at: Option<usize>,
) -> Result<RunStatus> {
    for s in stages {
        s.validate()?;
    }
    while state.progress.stage_index < stages.len() {
        let index = state.progress.stage_index;
        let config = &stages[index];
        while state.progress.step < config.steps {
            if stop_at.is_some_and(|s| state.progress.global_step >= s) {
                return Ok(RunStatus::Paused);
            }
            train_step(config, state, source)?;
            observer.on_step(state.metrics.last().expect("row just pushed"))?;
        }
        if index + 1 < stages.len() {
            state.enter_stage(index + 1, &stages[index + 1]);
        } else {
            state.progress.stage_index = stages.len();
        }
        observer.on_stage_end(index, state)?;
    }
    Ok(RunStatus::Finished)
}

pub struct StageOutcome {
    pub params: ModelParams,
    pub metrics: Vec<MetricRow>,
    pub clip_events: usize,
}

/// Trains one stage from `params`.
pub fn run_stage(config: &StageConfig, params: ModelParams, source: &mut dyn DataSource) -> Result<StageOutcome> {
    run_stages(std::slice::from_ref(config), params, source)
}

pub fn run_stages(stages: &[StageConfig], params: ModelParams, source: &mut dyn DataSource) -> Result<StageOutcome> {
    let mut state = TrainState::new(params, stages)?;
    run_schedule(stages, &mut state, source, &mut NoObserver, None)?;
    Ok(StageOutcome {
        params: state.params,
        metrics: state.metrics,
        clip_events: state.clip_events,
    })
}

pub fn check_curriculum(stages: &[StageConfig]) -> Result<()> {
    let kinds: Vec<StageKind> = stages.iter().map(|s| s.stage).collect();
    if kinds != [StageKind::I, StageKind::II, StageKind::III] {
        return Err(Error::InvalidArgument(format!("curriculum must run stages I, II, III in order, got {kinds:?}")));
    }
    let expert = stages[0].expert;
    if stages.iter().any(|s| s.expert != expert) {
        return Err(Error::InvalidArgument("all curriculum stages must train the same expert".into()));
    }
    Ok(())
}

/// Stage I → II → III for one expert, carrying parameters forward. The
/// camera encoder is created at the Stage II boundary.
pub fn run_curriculum(stages: &[StageConfig], params: ModelParams, source: &mut dyn DataSource) -> Result<StageOutcome> {
    check_curriculum(stages)?;
    if params.camera.is_some() {
        return Err(Error::InvalidArgument("curriculum starts from a model without a camera encoder".into()));
    }
    run_stages(stages, params, source)
}

/// The single-stage arm with the same total budget as `curriculum`.
pub fn joint_schedule(curriculum: &[StageConfig]) -> Result<StageConfig> {
    check_curriculum(curriculum)?;
    let mut joint = curriculum[2].clone();
    joint.stage = StageKind::Joint;
    joint.steps = curriculum.iter().map(|s| s.steps).sum();
    joint.freeze_phase_steps = None;
    joint.joint_mix = [curriculum[0].steps, curriculum[1].steps, curriculum[2].steps];
    Ok(joint)
}

/// Whether a tensor belongs to the camera encoder.
pub fn is_camera_tensor(name: &str) -> bool {
    name.starts_with(CAMERA_PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::scene::SceneConfig;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn tiny_source() -> SyntheticSource {
        SyntheticSource::new(1000, 4, SceneConfig { height: 8, width: 8, frames: 2, ..SceneConfig::default() }).unwrap()
    }

    fn tiny_params(seed: u64) -> ModelParams {
        ModelParams::init(&DenoiserConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn stage(kind: StageKind, steps: usize, seed: u64) -> StageConfig {
        StageConfig { batch_size: 2, ..StageConfig::new(kind, steps, seed) }
    }

    #[test]
    fn identical_runs_give_identical_hashes() {
        let cfg = stage(StageKind::II, 6, 3);
        let a = run_stage(&cfg, tiny_params(1), &mut tiny_source()).unwrap();
        let b = run_stage(&cfg, tiny_params(1), &mut tiny_source()).unwrap();
        assert_eq!(a.params.hash(), b.params.hash());
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
    }

    #[test]
    fn warmup_phase_freezes_the_backbone() {
        let mut cfg = stage(StageKind::II, 8, 4);
        cfg.freeze_phase_steps = Some(5);
        let stages = [cfg];
        let mut state = TrainState::new(tiny_params(2), &stages).unwrap();
        let before = state.params.backbone_hash();
        let cam_before = state.params.hash();
        run_schedule(&stages, &mut state, &mut tiny_source(), &mut NoObserver, Some(5)).unwrap();
        assert_eq!(state.params.backbone_hash(), before);
        assert_ne!(state.params.hash(), cam_before);
        run_schedule(&stages, &mut state, &mut tiny_source(), &mut NoObserver, None).unwrap();
        assert_ne!(state.params.backbone_hash(), before);
    }

    #[test]
    fn stage_one_never_reads_cameras() {
        struct Probed(SyntheticSource, Arc<AtomicUsize>);
        impl DataSource for Probed {
            fn sample(&mut self, stage: Stage, index: u64, rng: &mut ChaCha8Rng) -> Result<TrainingSample> {
                let mut s = self.0.sample(stage, index, rng)?;
                s.attach_probe(self.1.clone());
                Ok(s)
            }
            fn scene(&self) -> &SceneConfig {
                self.0.scene()
            }
        }
        let probe = Arc::new(AtomicUsize::new(0));
        let mut src = Probed(tiny_source(), probe.clone());
        let out = run_stage(&stage(StageKind::I, 3, 5), tiny_params(3), &mut src).unwrap();
        assert_eq!(probe.load(Ordering::SeqCst), 0);
        assert!(out.params.camera.is_none());
        run_stage(&stage(StageKind::II, 1, 5), out.params, &mut src).unwrap();
        assert!(probe.load(Ordering::SeqCst) > 0);
    }

    #[test]
    fn curriculum_log_has_monotone_stage_boundaries() {
        let stages = [stage(StageKind::I, 2, 1), stage(StageKind::II, 3, 2), stage(StageKind::III, 2, 3)];
        let out = run_curriculum(&stages, tiny_params(4), &mut tiny_source()).unwrap();
        let labels: Vec<&str> = out.metrics.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(labels, ["I", "I", "II", "II", "II", "III", "III"]);
        assert!(out.metrics.windows(2).all(|w| w[1].step == w[0].step + 1));
        assert!(out.params.camera.is_some());

        let joint = joint_schedule(&stages).unwrap();
        assert_eq!(joint.steps, 7);
        assert_eq!(joint.stage, StageKind::Joint);
        assert_eq!(joint.joint_mix, [2, 3, 2]);
        assert!(run_curriculum(&stages[..2], tiny_params(4), &mut tiny_source()).is_err());
    }

    #[test]
    fn joint_stage_mixes_all_stage_data() {
        struct Counting(SyntheticSource, [usize; 3]);
        impl DataSource for Counting {
            fn sample(&mut self, stage: Stage, index: u64, rng: &mut ChaCha8Rng) -> Result<TrainingSample> {
                self.1[stage as usize] += 1;
                self.0.sample(stage, index, rng)
            }
            fn scene(&self) -> &SceneConfig {
                self.0.scene()
            }
        }
        let mut src = Counting(tiny_source(), [0; 3]);
        let joint = StageConfig { joint_mix: [1, 1, 2], ..stage(StageKind::Joint, 12, 6) };
        let out = run_stage(&joint, tiny_params(6), &mut src).unwrap();
        assert!(out.params.camera.is_some());
        assert!(src.1.iter().all(|&n| n > 0), "stage draws {:?}", src.1);
        assert!(src.1[2] > src.1[0], "stage draws {:?}", src.1);
    }

    #[test]
    fn metrics_csv_round_trips() {
        let stages = [stage(StageKind::I, 3, 1)];
        let out = run_stages(&stages, tiny_params(5), &mut tiny_source()).unwrap();
        let text = metrics_csv(&out.metrics);
        assert!(text.starts_with("step,stage,expert,loss,grad_norm,lr\n"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), out.metrics);
    }

    #[test]
    fn exhausted_shards_stop_training() {
        let dir = tempfile::tempdir().unwrap();
        write_shard(
            &ShardSpec {
                stage: Stage::I,
                count: 3,
                seed: 1,
                character_seed_base: 7,
                characters: 2,
                scene: SceneConfig { height: 8, width: 8, frames: 2, ..SceneConfig::default() },
            },
            dir.path(),
        )
        .unwrap();
        let mut src = ShardSource::open(dir.path()).unwrap();
        let err = run_stage(&stage(StageKind::I, 2, 1), tiny_params(6), &mut src).err().unwrap();
        assert!(matches!(err, Error::DataExhausted(3)));
    }
}
