use std::path::PathBuf;

use clap::Args;
use rcm_core::scene::Stage;
use rcm_core::training::{write_shard, ShardSpec};
use rcm_core::{Error, Result};

use crate::common::{load_config, write_config};
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Training stage the samples supervise: I, II or III
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Number of samples
    #[arg(long, default_value_t = 64)]
    count: usize,
    /// Seed for sample draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Character pool size [default: data.characters]
    #[arg(long)]
    characters: Option<usize>,
    /// First character seed [default: data.character_seed_base]
    #[arg(long)]
    character_seed_base: Option<u64>,
    /// Use the loosened character generator, which trips the quality filter more often
    #[arg(long, default_value_t = false)]
    loose: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    match s {
        "I" | "1" => Ok(Stage::I),
        "II" | "2" => Ok(Stage::II),
        "III" | "3" => Ok(Stage::III),
        _ => Err(format!("unknown stage '{s}' (expected I, II or III)")),
    }
}

pub fn run(args: GenDataArgs) -> Result<()> {
    let config = load_config(&args.config, None)?;
    let mut scene = config.scene.clone();
    scene.style.loose |= args.loose;
    let spec = ShardSpec {
        stage: args.stage,
        count: args.count,
        seed: args.seed,
        character_seed_base: args.character_seed_base.unwrap_or(config.data.character_seed_base),
        characters: args.characters.unwrap_or(config.data.characters),
        scene,
    };
    if spec.characters == 0 {
        return Err(Error::InvalidArgument("--characters must be positive".into()));
    }
    let manifest = write_shard(&spec, &args.out)?;
    write_config(&args.out, &config)?;
    println!(
        "wrote {} {:?} samples to {} ({} rejected character drafts)",
        manifest.count,
        manifest.stage,
        args.out.display(),
        manifest.rejections.total()
    );
    Ok(())
}
