use std::path::PathBuf;

use clap::Args;
use rcm_core::camera::{orbit_trajectory, CameraPose};
use rcm_core::denoiser::MAX_REFERENCES;
use rcm_core::io::{read_ppm, write_ppm};
use rcm_core::sampler::{generate, SamplerConfig};
use rcm_core::{Error, Result};

use crate::common::{load_config, load_model, write_text};
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct RotateArgs {
    /// Checkpoint directory or training output directory
    #[arg(long)]
    checkpoint: PathBuf,
    /// Condition image (binary PPM at model resolution); repeat for up to 4 views
    #[arg(long = "image", required = true, value_name = "PPM")]
    images: Vec<PathBuf>,
    /// Camera distance from the character
    #[arg(long, default_value_t = 5.0)]
    distance: f64,
    /// Camera elevation in radians
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    elevation: f64,
    /// Azimuth of the first frame in radians
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    azimuth: f64,
    /// ODE integration steps
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Frames in the orbit
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Noise seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn run(args: RotateArgs) -> Result<()> {
    if args.images.len() > MAX_REFERENCES {
        return Err(Error::TooManyReferences { count: args.images.len() });
    }
    if args.frames == 0 || args.steps == 0 {
        return Err(Error::InvalidArgument("--frames and --steps must be positive".into()));
    }
    let source = load_model(&args.checkpoint)?;
    let config = load_config(&args.config, Some(&source.config_path))?;
    let range = &config.scene.viewpoints;
    if !(range.distance_min..=range.distance_max).contains(&args.distance) {
        return Err(Error::InvalidArgument(format!(
            "distance {} outside [{}, {}]",
            args.distance, range.distance_min, range.distance_max
        )));
    }
    if !(range.elevation_min..=range.elevation_max).contains(&args.elevation) {
        return Err(Error::InvalidArgument(format!(
            "elevation {} outside [{}, {}]",
            args.elevation, range.elevation_min, range.elevation_max
        )));
    }
    let (h, w) = config.scene.resolution();
    let images = args
        .images
        .iter()
        .map(|p| {
            let f = read_ppm(p)?;
            if (f.height(), f.width()) != (h, w) {
                return Err(Error::BadImage(format!(
                    "{} is {}x{}, model resolution is {h}x{w}",
                    p.display(),
                    f.height(),
                    f.width()
                )));
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    let cameras = orbit_trajectory(args.frames, args.distance, args.elevation, args.azimuth, config.scene.focal(), (h, w))?;
    let sampler = SamplerConfig { steps: args.steps, seed: args.seed, ..config.sampler.clone() };
    let cams = source.model.has_camera().then_some(cameras.as_slice());
    let video = generate(&source.model, &images, cams, args.frames, &sampler)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for f in 0..video.frames() {
        write_ppm(&args.out.join(format!("frame_{f:02}.ppm")), &video.to_frame(f)?)?;
    }
    let poses: Vec<_> = cameras.iter().map(CameraPose::to_record).collect();
    let mut sidecar = serde_json::to_string_pretty(&poses).map_err(|e| Error::FormatViolation(e.to_string()))?;
    sidecar.push('\n');
    write_text(&args.out.join("poses.json"), &sidecar)?;
    println!("wrote {} frames to {}", video.frames(), args.out.display());
    Ok(())
}
