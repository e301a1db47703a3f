//! Checkpoint directories: `manifest.json`, one RCMT file per parameter and
//! optimizer moment, and the metrics log so far.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_metrics_csv, write_metrics_csv, AdamConfig, AdamState, Progress, TrainState};
use crate::denoiser::{DenoiserConfig, ModelParams, CAMERA_PREFIX};
use crate::error::{Error, Result};
use crate::io::{read_rcmt, write_rcmt};

pub const CHECKPOINT_FORMAT: &str = "rcm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub adam_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: DenoiserConfig,
    pub config_hash: String,
    pub params_hash: String,
    pub progress: Progress,
    pub clip_events: usize,
    pub adam: AdamConfig,
    pub rng: ChaCha8Rng,
    pub tensors: Vec<TensorEntry>,
}

fn param_file(name: &str) -> String {
    format!("param.{name}.rcmt")
}

fn moment_file(which: &str, name: &str) -> String {
    format!("adam_{which}.{name}.rcmt")
}

pub fn checkpoint_save(state: &TrainState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let named = state.params.named();
    if state.optimizer.names.len() != named.len() {
        return Err(Error::shape(&[named.len()], &[state.optimizer.names.len()]));
    }
    let mut tensors = Vec::with_capacity(named.len());
    for (i, (name, t)) in named.iter().enumerate() {
        write_rcmt(&dir.join(param_file(name)), t)?;
        write_rcmt(&dir.join(moment_file("m", name)), &state.optimizer.m[i])?;
        write_rcmt(&dir.join(moment_file("v", name)), &state.optimizer.v[i])?;
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            adam_steps: state.optimizer.steps[i],
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: state.params.config.clone(),
        config_hash: state.params.config.hash(),
        params_hash: state.params.hash(),
        progress: state.progress,
        clip_events: state.clip_events,
        adam: state.optimizer.config,
        rng: state.rng.clone(),
        tensors,
    };
    write_metrics_csv(&dir.join("metrics.csv"), &state.metrics)?;
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::FormatViolation(e.to_string()))?;
    text.push('\n');
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::FormatViolation(format!("{}: {e}", path.display())))?;
    if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
        return Err(Error::FormatViolation(format!("unsupported checkpoint {} v{}", m.format, m.version)));
    }
    if m.config_hash != m.config.hash() {
        return Err(Error::FormatViolation("config hash does not match stored config".into()));
    }
    Ok(m)
}

/// Loads a checkpoint, optionally requiring a specific model configuration.
pub fn checkpoint_load(dir: &Path, expected: Option<&DenoiserConfig>) -> Result<TrainState> {
    let m = read_checkpoint_manifest(dir)?;
    if let Some(want) = expected {
        if *want != m.config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint config {} differs from requested {}",
                serde_json::to_string(&m.config).unwrap_or_default(),
                serde_json::to_string(want).unwrap_or_default()
            )));
        }
    }
    m.config.validate()?;
    let mut params = ModelParams::init(&m.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    if m.tensors.iter().any(|t| t.name.starts_with(CAMERA_PREFIX)) {
        params.attach_camera(&mut ChaCha8Rng::seed_from_u64(0));
    }
    let skeleton: Vec<(String, Vec<usize>)> =
        params.named().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    let listed: Vec<(String, Vec<usize>)> = m.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    if skeleton != listed {
        return Err(Error::ConfigMismatch("checkpoint tensors do not match the model structure".into()));
    }
    let mut optimizer = AdamState::with_config(&params, m.adam);
    for (i, (name, t)) in params.named_mut().into_iter().enumerate() {
        let load = |file: String| -> Result<_> {
            let loaded = read_rcmt(&dir.join(file))?;
            if loaded.shape() != skeleton[i].1.as_slice() {
                return Err(Error::ConfigMismatch(format!("tensor {name} has shape {:?}", loaded.shape())));
            }
            Ok(loaded)
        };
        *t = load(param_file(&name))?;
        optimizer.m[i] = load(moment_file("m", &name))?;
        optimizer.v[i] = load(moment_file("v", &name))?;
        optimizer.steps[i] = m.tensors[i].adam_steps;
    }
    if params.hash() != m.params_hash {
        return Err(Error::FormatViolation("parameter hash does not match manifest".into()));
    }
    let metrics_path = dir.join("metrics.csv");
    let metrics = parse_metrics_csv(&fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?)?;
    Ok(TrainState {
        params,
        optimizer,
        rng: m.rng,
        progress: m.progress,
        metrics,
        clip_events: m.clip_events,
    })
}
