use std::path::PathBuf;

use clap::{ArgGroup, Args};
use rcm_core::evaluation::{
    benchmark_cases, run_benchmark, write_report, BenchmarkSpec, ModelGenerator, OracleGenerator, OrbitGenerator,
};
use rcm_core::sampler::SamplerConfig;
use rcm_core::{Error, Result};

use crate::common::{load_config, load_model, write_config};
use crate::ConfigArgs;

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("generator").required(true).args(["checkpoint", "oracle"])))]
pub struct EvalArgs {
    /// Checkpoint directory or training output directory
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the oracle renderer instead of a model (harness upper bound)
    #[arg(long, default_value_t = false)]
    oracle: bool,
    /// Held-out character seeds as START..END (end exclusive) [default: benchmark.seed_start, 32 characters]
    #[arg(long, value_name = "START..END", value_parser = parse_range)]
    benchmark_seed_range: Option<(u64, u64)>,
    /// Seed for condition images and orbit starts [default: benchmark.condition_seed]
    #[arg(long)]
    condition_seed: Option<u64>,
    /// ODE integration steps [default: sampler.steps]
    #[arg(long)]
    steps: Option<usize>,
    /// Noise seed [default: sampler.seed]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_range(s: &str) -> std::result::Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got '{s}'"))?;
    let a: u64 = a.parse().map_err(|_| format!("bad range start '{a}'"))?;
    let b: u64 = b.parse().map_err(|_| format!("bad range end '{b}'"))?;
    if b <= a {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok((a, b))
}

pub fn run(args: EvalArgs) -> Result<()> {
    let source = args.checkpoint.as_ref().map(|p| load_model(p)).transpose()?;
    let fallback = source.as_ref().map(|s| s.config_path.as_path());
    let config = load_config(&args.config, fallback)?;
    let mut spec: BenchmarkSpec = config.benchmark.clone();
    if let Some((start, end)) = args.benchmark_seed_range {
        spec.seed_start = start;
        spec.count = usize::try_from(end - start).map_err(|_| Error::InvalidArgument("seed range too large".into()))?;
    }
    if let Some(s) = args.condition_seed {
        spec.condition_seed = s;
    }
    let sampler = SamplerConfig {
        steps: args.steps.unwrap_or(config.sampler.steps),
        seed: args.seed.unwrap_or(config.sampler.seed),
        ..config.sampler.clone()
    };
    let cases = benchmark_cases(&spec, &config.scene)?;
    let oracle = OracleGenerator { scene: &config.scene };
    let model_gen;
    let generator: &dyn OrbitGenerator = match &source {
        Some(s) => {
            model_gen = ModelGenerator { model: &s.model, sampler };
            &model_gen
        }
        None => &oracle,
    };
    let report = run_benchmark(generator, &cases);
    write_report(&report, &cases, &args.out)?;
    write_config(&args.out, &config)?;
    let m = &report.mean;
    println!(
        "{} characters ({} failed): psnr {:.3} ssim {:.4} cam_err {:.5} smooth {:.3} identity {:.4} static {:.5}",
        report.rows.len(),
        report.failures,
        m.psnr,
        m.ssim,
        m.cam_err,
        m.smooth,
        m.identity,
        m.staticity
    );
    println!(
        "back-half psnr {:.3} vs repeated-condition baseline {:.3}",
        m.back_half_psnr, m.baseline_back_half_psnr
    );
    Ok(())
}
