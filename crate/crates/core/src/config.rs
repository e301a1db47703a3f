//! The complete run configuration, with a default for every field.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::evaluation::BenchmarkSpec;
use crate::flow::{Expert, ExpertSplit};
use crate::sampler::SamplerConfig;
use crate::scene::SceneConfig;
use crate::training::{StageConfig, StageKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub character_seed_base: u64,
    pub characters: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            character_seed_base: 0,
            characters: 64,
        }
    }
}

/// Per-stage budgets shared by both experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageBudgets {
    pub stage_i: StageConfig,
    pub stage_ii: StageConfig,
    pub stage_iii: StageConfig,
}

impl Default for StageBudgets {
    fn default() -> Self {
        StageBudgets {
            stage_i: StageConfig::new(StageKind::I, 200, 1),
            stage_ii: StageConfig::new(StageKind::II, 200, 2),
            stage_iii: StageConfig::new(StageKind::III, 400, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub model: DenoiserConfig,
    pub split: ExpertSplit,
    /// Train the high-noise expert with the full stage budgets. When false it
    /// gets `high_noise_steps` steps per stage.
    pub moe: bool,
    pub high_noise_steps: usize,
    pub data: DataConfig,
    pub stages: StageBudgets,
    /// Save a resumable checkpoint every this many optimizer steps (0: only
    /// at stage boundaries).
    pub checkpoint_every: usize,
    pub init_seed: u64,
    pub sampler: SamplerConfig,
    pub benchmark: BenchmarkSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneConfig::default(),
            model: DenoiserConfig::default(),
            split: ExpertSplit::default(),
            moe: false,
            high_noise_steps: 2,
            data: DataConfig::default(),
            stages: StageBudgets::default(),
            checkpoint_every: 50,
            init_seed: 0,
            sampler: SamplerConfig::default(),
            benchmark: BenchmarkSpec::default(),
        }
    }
}

/// Which timestep range an expert trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpertRole {
    Low,
    High,
}

impl ExpertRole {
    pub fn expert(self) -> Expert {
        match self {
            ExpertRole::Low => Expert::Low,
            ExpertRole::High => Expert::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExpertRole::Low => "low",
            ExpertRole::High => "high",
        }
    }

    pub const ALL: [ExpertRole; 2] = [ExpertRole::Low, ExpertRole::High];
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::FormatViolation(format!("run config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// Pretty JSON with a trailing newline; parsing it back reproduces the
    /// same bytes.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run config serializes");
        s.push('\n');
        s
    }

    /// Overrides one field addressed by a dotted path, e.g.
    /// `stages.stage_i.steps=50` or `model.camera_mode="cross_attention"`.
    /// Values are JSON; anything that does not parse as JSON is taken as a
    /// string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override '{assignment}' is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("run config serializes");
        let mut node = &mut tree;
        for key in path.split('.') {
            node = node
                .get_mut(key)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown config field '{path}'")))?;
        }
        *node = value;
        let updated: RunConfig = serde_json::from_value(tree)
            .map_err(|e| Error::InvalidArgument(format!("override '{assignment}': {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.split.validate()?;
        self.scene.viewpoints.validate()?;
        let p = self.model.patch;
        if self.scene.height % p != 0 || self.scene.width % p != 0 {
            return Err(Error::IndivisibleResolution { height: self.scene.height, width: self.scene.width, patch: p });
        }
        let kinds = [&self.stages.stage_i, &self.stages.stage_ii, &self.stages.stage_iii].map(|s| s.stage);
        if kinds != [StageKind::I, StageKind::II, StageKind::III] {
            return Err(Error::InvalidArgument(format!("stage budgets must be I, II, III; got {kinds:?}")));
        }
        for s in [&self.stages.stage_i, &self.stages.stage_ii, &self.stages.stage_iii] {
            s.validate()?;
        }
        if self.data.characters == 0 {
            return Err(Error::InvalidArgument("data.characters must be positive".into()));
        }
        if self.sampler.steps == 0 {
            return Err(Error::InvalidArgument("sampler.steps must be positive".into()));
        }
        Ok(())
    }

    /// The I → II → III schedule for one expert.
    pub fn curriculum(&self, role: ExpertRole) -> Vec<StageConfig> {
        [&self.stages.stage_i, &self.stages.stage_ii, &self.stages.stage_iii]
            .into_iter()
            .map(|s| {
                let mut s = s.clone();
                s.expert = role.expert();
                s.split = self.split;
                if role == ExpertRole::High && !self.moe {
                    s.steps = s.steps.min(self.high_noise_steps.max(1));
                    if s.stage == StageKind::II {
                        s.freeze_phase_steps = Some(s.steps / 2);
                    }
                }
                s
            })
            .collect()
    }

    /// The single joint stage with the curriculum's total budget.
    pub fn joint(&self, role: ExpertRole) -> Result<StageConfig> {
        crate::training::joint_schedule(&self.curriculum(role))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_is_byte_stable() {
        let c = RunConfig::default();
        let text = c.to_canonical_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_canonical_json(), text);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn overrides_by_path() {
        let mut c = RunConfig::default();
        c.set("stages.stage_i.steps=7").unwrap();
        c.set("model.camera_mode=cross_attention").unwrap();
        c.set("scene.height=16").unwrap();
        assert_eq!(c.stages.stage_i.steps, 7);
        assert_eq!(c.model.camera_mode, crate::denoiser::CameraMode::CrossAttention);
        assert!(c.set("model.bogus=1").is_err());
        assert!(c.set("scene.height=30").is_err());
        assert!(RunConfig::from_json(r#"{"unknown": 1}"#).is_err());
    }

    #[test]
    fn expert_schedules() {
        let c = RunConfig::default();
        let low = c.curriculum(ExpertRole::Low);
        assert_eq!(low.iter().map(|s| s.steps).collect::<Vec<_>>(), [200, 200, 400]);
        assert!(low.iter().all(|s| s.expert == Expert::Low));
        let high = c.curriculum(ExpertRole::High);
        assert!(high.iter().all(|s| s.steps == 2 && s.expert == Expert::High));
        assert_eq!(high[1].freeze_steps(), 1);
        let moe = RunConfig { moe: true, ..c.clone() };
        assert_eq!(moe.curriculum(ExpertRole::High)[2].steps, 400);
        assert_eq!(c.joint(ExpertRole::Low).unwrap().steps, 800);
    }
}
