use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, PoseRecord, Viewpoint};
use crate::error::{Error, Result};
use crate::io::{read_rcmt, write_rcmt};
use crate::scene::{make_training_sample, CharacterPool, RejectReason, SceneConfig, Stage, Style, TrainingSample};
use crate::tensor::{Frame, VideoTensor};

/// Supplies training samples. `index` counts samples drawn so far in the
/// current stage; generated sources may ignore it and draw from `rng`.
pub trait DataSource: Send {
    fn sample(&mut self, stage: Stage, index: u64, rng: &mut ChaCha8Rng) -> Result<TrainingSample>;

    fn scene(&self) -> &SceneConfig;
}

/// Samples rendered on demand from a fixed character pool.
pub struct SyntheticSource {
    pub pool: CharacterPool,
    pub scene: SceneConfig,
}

impl SyntheticSource {
    pub fn new(seed_base: u64, characters: usize, scene: SceneConfig) -> Result<Self> {
        let pool = CharacterPool::new(seed_base, characters, scene.style, &scene.viewpoints)?;
        Ok(SyntheticSource { pool, scene })
    }
}

impl DataSource for SyntheticSource {
    fn sample(&mut self, stage: Stage, _index: u64, rng: &mut ChaCha8Rng) -> Result<TrainingSample> {
        make_training_sample(stage, rng, &self.pool, &self.scene)
    }

    fn scene(&self) -> &SceneConfig {
        &self.scene
    }
}

pub const SHARD_FORMAT: &str = "rcm-shard";
pub const SHARD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub occupancy: usize,
    pub asymmetry: usize,
    pub palette_contrast: usize,
}

impl RejectionStats {
    pub fn from_reasons(reasons: &[RejectReason]) -> Self {
        let mut s = RejectionStats::default();
        for r in reasons {
            match r {
                RejectReason::Occupancy => s.occupancy += 1,
                RejectReason::Asymmetry => s.asymmetry += 1,
                RejectReason::PaletteContrast => s.palette_contrast += 1,
            }
        }
        s
    }

    pub fn total(&self) -> usize {
        self.occupancy + self.asymmetry + self.palette_contrast
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub character_seed: u64,
    pub conditions: usize,
    pub viewpoint: Option<Viewpoint>,
    pub cameras: Option<Vec<PoseRecord>>,
    pub conditions_file: String,
    pub target_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format: String,
    pub version: u32,
    pub stage: Stage,
    pub count: usize,
    pub seed: u64,
    pub character_seed_base: u64,
    pub characters: usize,
    pub style: Style,
    pub scene: SceneConfig,
    pub rejections: RejectionStats,
    pub samples: Vec<ShardEntry>,
}

pub struct ShardSpec {
    pub stage: Stage,
    pub count: usize,
    pub seed: u64,
    pub character_seed_base: u64,
    pub characters: usize,
    pub scene: SceneConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::FormatViolation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders `count` samples into `out` as RCMT tensors plus `manifest.json`.
pub fn write_shard(spec: &ShardSpec, out: &Path) -> Result<ShardManifest> {
    use rand::SeedableRng;
    let scene = &spec.scene;
    let pool = CharacterPool::new(spec.character_seed_base, spec.characters, scene.style, &scene.viewpoints)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut samples = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let s = make_training_sample(spec.stage, &mut rng, &pool, scene)?;
        let conditions = VideoTensor::from_frames(&s.condition_images)?;
        let conditions_file = format!("sample_{i:06}_conditions.rcmt");
        let target_file = format!("sample_{i:06}_target.rcmt");
        write_rcmt(&out.join(&conditions_file), conditions.tensor())?;
        write_rcmt(&out.join(&target_file), s.target_video.tensor())?;
        samples.push(ShardEntry {
            character_seed: s.character_seed,
            conditions: s.condition_count(),
            viewpoint: s.viewpoint,
            cameras: s.camera_trajectory().map(|t| t.iter().map(CameraPose::to_record).collect()),
            conditions_file,
            target_file,
        });
    }
    let manifest = ShardManifest {
        format: SHARD_FORMAT.to_string(),
        version: SHARD_VERSION,
        stage: spec.stage,
        count: spec.count,
        seed: spec.seed,
        character_seed_base: spec.character_seed_base,
        characters: spec.characters,
        style: scene.style,
        scene: scene.clone(),
        rejections: RejectionStats::from_reasons(&pool.rejections),
        samples,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_shard_manifest(dir: &Path) -> Result<ShardManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: ShardManifest = serde_json::from_str(&text).map_err(|e| Error::FormatViolation(format!("{}: {e}", path.display())))?;
    if m.format != SHARD_FORMAT || m.version != SHARD_VERSION {
        return Err(Error::FormatViolation(format!("unsupported shard {} v{}", m.format, m.version)));
    }
    if m.samples.len() != m.count {
        return Err(Error::FormatViolation("manifest sample count disagrees with entries".into()));
    }
    Ok(m)
}

/// Samples read in order from a shard written by [`write_shard`].
pub struct ShardSource {
    dir: PathBuf,
    manifest: ShardManifest,
}

impl ShardSource {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(ShardSource {
            dir: dir.to_path_buf(),
            manifest: read_shard_manifest(dir)?,
        })
    }

    pub fn manifest(&self) -> &ShardManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn load(&self, index: usize) -> Result<TrainingSample> {
        let entry = self.manifest.samples.get(index).ok_or(Error::DataExhausted(index))?;
        let conditions = VideoTensor::from_tensor(read_rcmt(&self.dir.join(&entry.conditions_file))?)?;
        let target = VideoTensor::from_tensor(read_rcmt(&self.dir.join(&entry.target_file))?)?;
        let images = (0..conditions.frames())
            .map(|i| conditions.to_frame(i))
            .collect::<Result<Vec<Frame>>>()?;
        let cameras = match &entry.cameras {
            Some(recs) => Some(recs.iter().map(CameraPose::from_record).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        let mut s = TrainingSample::new(self.manifest.stage, entry.character_seed, images, cameras, target)?;
        s.viewpoint = entry.viewpoint;
        Ok(s)
    }
}

impl DataSource for ShardSource {
    fn sample(&mut self, stage: Stage, index: u64, _rng: &mut ChaCha8Rng) -> Result<TrainingSample> {
        if stage != self.manifest.stage {
            return Err(Error::ConfigMismatch(format!(
                "shard holds {:?} samples, training wants {stage:?}",
                self.manifest.stage
            )));
        }
        let i = usize::try_from(index).map_err(|_| Error::DataExhausted(usize::MAX))?;
        if i >= self.manifest.count {
            return Err(Error::DataExhausted(i));
        }
        self.load(i)
    }

    fn scene(&self) -> &SceneConfig {
        &self.manifest.scene
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spec(stage: Stage, count: usize) -> ShardSpec {
        ShardSpec {
            stage,
            count,
            seed: 5,
            character_seed_base: 40,
            characters: 3,
            scene: SceneConfig { height: 8, width: 8, frames: 4, ..SceneConfig::default() },
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    }

    #[test]
    fn shards_are_byte_stable_and_readable() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = write_shard(&spec(Stage::II, 3), a.path()).unwrap();
        write_shard(&spec(Stage::II, 3), b.path()).unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
        assert_eq!(m.count, 3);
        assert_eq!(read_shard_manifest(a.path()).unwrap(), m);

        let mut src = ShardSource::open(a.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let direct = {
            let pool = CharacterPool::new(40, 3, Style::default(), &spec(Stage::II, 1).scene.viewpoints).unwrap();
            make_training_sample(Stage::II, &mut ChaCha8Rng::seed_from_u64(5), &pool, &spec(Stage::II, 1).scene).unwrap()
        };
        let s0 = src.sample(Stage::II, 0, &mut rng).unwrap();
        assert_eq!(s0.target_video, direct.target_video);
        assert_eq!(s0.camera_trajectory().unwrap(), direct.camera_trajectory().unwrap());
        assert!(matches!(src.sample(Stage::II, 3, &mut rng), Err(Error::DataExhausted(3))));
        assert!(matches!(src.sample(Stage::I, 0, &mut rng), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn loosened_generator_reports_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(Stage::I, 1);
        s.characters = 200;
        s.scene.style.loose = true;
        let m = write_shard(&s, dir.path()).unwrap();
        assert!(m.rejections.total() > 0);
    }
}
