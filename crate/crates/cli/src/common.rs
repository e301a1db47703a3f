use std::fs;
use std::path::{Path, PathBuf};

use rcm_core::config::RunConfig;
use rcm_core::sampler::VelocityModel;
use rcm_core::training::checkpoint_load;
use rcm_core::{Error, Result};

use crate::ConfigArgs;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `--config` if given, else `fallback` if it exists, else defaults; then
/// every `--set` in order.
pub fn load_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut config = match (&args.config, fallback) {
        (Some(path), _) => RunConfig::from_json(&read_text(path)?)?,
        (None, Some(path)) if path.is_file() => RunConfig::from_json(&read_text(path)?)?,
        _ => RunConfig::default(),
    };
    for o in &args.overrides {
        config.set(o)?;
    }
    Ok(config)
}

pub fn write_config(dir: &Path, config: &RunConfig) -> Result<()> {
    write_text(&dir.join(RUN_CONFIG_FILE), &config.to_canonical_json())
}

/// A checkpoint directory, or a training output directory holding final
/// checkpoints for one model or for both experts.
pub struct ModelSource {
    pub model: VelocityModel,
    /// The run configuration stored next to the checkpoint, if any.
    pub config_path: PathBuf,
}

pub fn final_checkpoint(out: &Path, name: &str) -> PathBuf {
    out.join("checkpoints").join(name).join("final")
}

pub fn load_model(path: &Path) -> Result<ModelSource> {
    let config_path = path.join(RUN_CONFIG_FILE);
    if path.join("manifest.json").is_file() {
        let state = checkpoint_load(path, None)?;
        return Ok(ModelSource { model: VelocityModel::Single(state.params), config_path });
    }
    let (low, high) = (final_checkpoint(path, "low"), final_checkpoint(path, "high"));
    if low.join("manifest.json").is_file() && high.join("manifest.json").is_file() {
        let split = if config_path.is_file() {
            RunConfig::from_json(&read_text(&config_path)?)?.split
        } else {
            Default::default()
        };
        let model = VelocityModel::Experts {
            low: checkpoint_load(&low, None)?.params,
            high: checkpoint_load(&high, None)?.params,
            split,
        };
        return Ok(ModelSource { model, config_path });
    }
    let single = final_checkpoint(path, "model");
    if single.join("manifest.json").is_file() {
        let state = checkpoint_load(&single, None)?;
        return Ok(ModelSource { model: VelocityModel::Single(state.params), config_path });
    }
    let manifest = path.join("manifest.json");
    Err(Error::io(&manifest, std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint found")))
}
