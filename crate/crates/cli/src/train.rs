use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use rcm_core::config::{ExpertRole, RunConfig};
use rcm_core::denoiser::ModelParams;
use rcm_core::flow::Expert;
use rcm_core::training::{
    checkpoint_load, checkpoint_save, metrics_csv, run_schedule, DataSource, MetricRow, RunStatus, ShardSource,
    StageConfig, StageKind, SyntheticSource, TrainObserver, TrainState,
};
use rcm_core::{Error, Result};

use crate::common::{load_config, write_config, write_text, RUN_CONFIG_FILE};
use crate::ConfigArgs;

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("schedule").required(true).args(["curriculum", "no_stages", "stage"])))]
pub struct TrainArgs {
    /// Run Stage I -> II -> III for each expert
    #[arg(long, default_value_t = false)]
    curriculum: bool,
    /// Ablation: one joint stage mixing all stages' data, with the curriculum's total budget
    #[arg(long, default_value_t = false)]
    no_stages: bool,
    /// Run a single stage (I, II, III or IIIa) of one model trained on all timesteps
    #[arg(long, value_parser = parse_stage_kind)]
    stage: Option<StageKind>,
    /// Start the single stage from this checkpoint instead of a fresh model
    #[arg(long, value_name = "DIR", requires = "stage")]
    from: Option<PathBuf>,
    /// Read samples from a shard written by gen-data (single stage only)
    #[arg(long, value_name = "DIR", requires = "stage")]
    data: Option<PathBuf>,
    /// Continue from the latest checkpoints under --out, reusing its run_config.json
    #[arg(long, default_value_t = false)]
    resume: bool,
    /// Stop (resumably) once a model has completed this many optimizer steps
    #[arg(long, value_name = "STEPS")]
    stop_after: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_stage_kind(s: &str) -> std::result::Result<StageKind, String> {
    match s {
        "I" => Ok(StageKind::I),
        "II" => Ok(StageKind::II),
        "III" => Ok(StageKind::III),
        "IIIa" | "joint" => Ok(StageKind::Joint),
        _ => Err(format!("unknown stage '{s}' (expected I, II, III or IIIa)")),
    }
}

/// One independently trained model and its schedule.
struct Job {
    name: &'static str,
    schedule: Vec<StageConfig>,
    init_seed: u64,
    from: Option<PathBuf>,
}

fn jobs(args: &TrainArgs, config: &RunConfig) -> Result<Vec<Job>> {
    if let Some(kind) = args.stage {
        let mut stage = match kind {
            StageKind::I => config.stages.stage_i.clone(),
            StageKind::II => config.stages.stage_ii.clone(),
            StageKind::III => config.stages.stage_iii.clone(),
            StageKind::Joint => config.joint(ExpertRole::Low)?,
        };
        stage.stage = kind;
        stage.expert = Expert::Any;
        stage.split = config.split;
        return Ok(vec![Job { name: "model", schedule: vec![stage], init_seed: config.init_seed, from: args.from.clone() }]);
    }
    ExpertRole::ALL
        .iter()
        .enumerate()
        .map(|(i, &role)| {
            let schedule = if args.no_stages { vec![config.joint(role)?] } else { config.curriculum(role) };
            Ok(Job { name: role.name(), schedule, init_seed: config.init_seed + i as u64, from: None })
        })
        .collect()
}

struct BoundarySaver<'a> {
    dir: &'a Path,
    schedule: &'a [StageConfig],
    config: &'a RunConfig,
}

impl BoundarySaver<'_> {
    fn save(&self, state: &TrainState, name: &str) -> Result<()> {
        let dir = self.dir.join(name);
        checkpoint_save(state, &dir)?;
        write_config(&dir, self.config)
    }
}

impl TrainObserver for BoundarySaver<'_> {
    fn on_step(&mut self, row: &MetricRow) -> Result<()> {
        if row.step % 50 == 0 {
            println!("[{}] step {} loss {:.5} grad_norm {:.4}", row.stage, row.step, row.loss, row.grad_norm);
        }
        Ok(())
    }

    fn on_stage_end(&mut self, index: usize, state: &TrainState) -> Result<()> {
        self.save(state, &format!("stage_{}", self.schedule[index].stage))
    }
}

fn initial_state(job: &Job, config: &RunConfig) -> Result<TrainState> {
    let params = match &job.from {
        Some(dir) => {
            let mut p = checkpoint_load(dir, Some(&config.model))?.params;
            if !job.schedule[0].stage.uses_camera() && p.camera.is_some() {
                return Err(Error::InvalidArgument("Stage I cannot start from a model with a camera encoder".into()));
            }
            p.config = config.model.clone();
            p
        }
        None => ModelParams::seeded(&config.model, job.init_seed)?,
    };
    TrainState::new(params, &job.schedule)
}

/// Trains one job, checkpointing to `<dir>/latest` periodically. Returns
/// false if stopped early by `stop_after`.
fn train_job(job: &Job, config: &RunConfig, source: &mut dyn DataSource, dir: &Path, args: &TrainArgs) -> Result<bool> {
    let latest = dir.join("latest");
    let mut state = if args.resume && latest.join("manifest.json").is_file() {
        checkpoint_load(&latest, Some(&config.model))?
    } else {
        initial_state(job, config)?
    };
    let mut saver = BoundarySaver { dir, schedule: &job.schedule, config };
    loop {
        let g = state.progress.global_step;
        let periodic = (config.checkpoint_every > 0).then(|| (g / config.checkpoint_every + 1) * config.checkpoint_every);
        let limit = match (periodic, args.stop_after) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let status = run_schedule(&job.schedule, &mut state, source, &mut saver, limit)?;
        saver.save(&state, "latest")?;
        match status {
            RunStatus::Finished => break,
            RunStatus::Paused if args.stop_after.is_some_and(|s| state.progress.global_step >= s) => {
                println!("[{}] paused at step {}", job.name, state.progress.global_step);
                return Ok(false);
            }
            RunStatus::Paused => {}
        }
    }
    saver.save(&state, "final")?;
    if state.clip_events > 0 {
        println!("[{}] gradient clipping triggered on {} steps", job.name, state.clip_events);
    }
    Ok(true)
}

fn data_source(args: &TrainArgs, config: &RunConfig) -> Result<Box<dyn DataSource>> {
    Ok(match &args.data {
        Some(dir) => Box::new(ShardSource::open(dir)?),
        None => Box::new(SyntheticSource::new(
            config.data.character_seed_base,
            config.data.characters,
            config.scene.clone(),
        )?),
    })
}

pub fn run(args: TrainArgs) -> Result<()> {
    let config = if args.resume {
        load_config(&args.config, Some(&args.out.join(RUN_CONFIG_FILE)))?
    } else {
        load_config(&args.config, None)?
    };
    write_config(&args.out, &config)?;
    let jobs = jobs(&args, &config)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    for job in &jobs {
        let dir = args.out.join("checkpoints").join(job.name);
        // Each model gets its own source so experts see identical data streams.
        let mut source = data_source(&args, &config)?;
        if !train_job(job, &config, source.as_mut(), &dir, &args)? {
            return Ok(());
        }
        rows.extend(checkpoint_load(&dir.join("final"), None)?.metrics);
        println!("[{}] finished; checkpoints in {}", job.name, dir.display());
    }
    write_text(&args.out.join("metrics.csv"), &metrics_csv(&rows))
}
