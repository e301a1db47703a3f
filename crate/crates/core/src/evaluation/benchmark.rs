use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{
    camera_control_error, canonical_staticity, identity_score, orbit_smoothness, psnr, ssim, ControlCase,
};
use crate::camera::{CameraPose, Viewpoint};
use crate::error::{Error, Result};
use crate::io::write_ppm;
use crate::sampler::{generate, SamplerConfig, VelocityModel};
use crate::scene::{condition_image, dataset_viewpoints, make_character, CharacterSpec, SceneConfig};
use crate::tensor::{Frame, VideoTensor};

/// Benchmark characters come from seeds at or above this value; training
/// pools use small seed bases, so the two never overlap.
pub const HELD_OUT_SEED_START: u64 = 1 << 32;

pub const REPORT_HEADER: &str = "id,psnr,ssim,cam_err,smooth,identity,static";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub seed_start: u64,
    pub count: usize,
    /// Seeds the condition image and orbit start drawn for each character.
    pub condition_seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed_start: HELD_OUT_SEED_START,
            count: 32,
            condition_seed: 0,
        }
    }
}

/// One held-out character: a single condition view and the oracle orbit the
/// generator should reproduce.
#[derive(Clone, Debug)]
pub struct BenchmarkCase {
    pub id: u64,
    pub character: CharacterSpec,
    pub condition: Frame,
    pub viewpoint: Viewpoint,
    pub cameras: Vec<CameraPose>,
    pub oracle: VideoTensor,
}

fn case_rng(seed: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id)
}

pub fn benchmark_cases(spec: &BenchmarkSpec, scene: &SceneConfig) -> Result<Vec<BenchmarkCase>> {
    if spec.seed_start < HELD_OUT_SEED_START {
        return Err(Error::InvalidArgument(format!(
            "benchmark seeds must start at or above {HELD_OUT_SEED_START}, got {}",
            spec.seed_start
        )));
    }
    if spec.count == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one character".into()));
    }
    (0..spec.count as u64)
        .into_par_iter()
        .map(|i| {
            let id = spec.seed_start + i;
            let character = make_character(id, scene.style)?;
            let mut rng = case_rng(spec.condition_seed, id);
            let (condition, _) = condition_image(&mut rng, &character, scene)?;
            let viewpoint = dataset_viewpoints(id, &scene.viewpoints)?[rng.gen_range(0..3)];
            let (cameras, oracle) = scene.oracle_orbit(&character, &viewpoint)?;
            Ok(BenchmarkCase { id, character, condition, viewpoint, cameras, oracle })
        })
        .collect()
}

/// Produces videos for benchmark cases.
pub trait OrbitGenerator: Sync {
    /// The full orbit along `case.cameras`.
    fn orbit(&self, case: &BenchmarkCase) -> Result<VideoTensor>;

    /// A video with the camera held at the orbit's first view.
    fn hold(&self, case: &BenchmarkCase) -> Result<VideoTensor>;
}

/// Renders the ground truth; scores are the harness's upper bound.
pub struct OracleGenerator<'a> {
    pub scene: &'a SceneConfig,
}

impl OrbitGenerator for OracleGenerator<'_> {
    fn orbit(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
        Ok(case.oracle.clone())
    }

    fn hold(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
        self.scene.oracle_static(&case.character, &case.cameras[0])
    }
}

/// Repeats the condition image for every frame.
pub struct RepeatCondition;

impl OrbitGenerator for RepeatCondition {
    fn orbit(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
        VideoTensor::from_frames(&vec![case.condition.clone(); case.cameras.len()])
    }

    fn hold(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
        self.orbit(case)
    }
}

/// Samples from a trained model given the single condition image.
pub struct ModelGenerator<'a> {
    pub model: &'a VelocityModel,
    pub sampler: SamplerConfig,
}

impl ModelGenerator<'_> {
    fn run(&self, case: &BenchmarkCase, cameras: &[CameraPose], stream: u64) -> Result<VideoTensor> {
        let sampler = SamplerConfig {
            seed: case_rng(self.sampler.seed ^ stream, case.id).gen(),
            ..self.sampler.clone()
        };
        let cams = self.model.has_camera().then_some(cameras);
        generate(self.model, std::slice::from_ref(&case.condition), cams, cameras.len(), &sampler)
    }
}

impl OrbitGenerator for ModelGenerator<'_> {
    fn orbit(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
        self.run(case, &case.cameras, 0)
    }

    fn hold(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
        self.run(case, &vec![case.cameras[0].clone(); case.cameras.len()], 1)
    }
}

/// Frames whose azimuth offset from the first view lies strictly inside
/// (π/2, 3π/2), i.e. views of the side facing away from the first camera.
pub fn back_half_frames(frames: usize) -> Vec<usize> {
    (0..frames).filter(|&k| 4 * k > frames && 4 * k < 3 * frames).collect()
}

fn frame_psnrs(video: &VideoTensor, oracle: &VideoTensor) -> Result<Vec<f64>> {
    video.same_shape(oracle)?;
    (0..oracle.frames()).map(|f| psnr(&video.to_frame(f)?, &oracle.to_frame(f)?)).collect()
}

fn mean_at(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterRow {
    pub id: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub cam_err: f64,
    pub smooth: f64,
    pub smooth_static: bool,
    pub identity: f64,
    #[serde(rename = "static")]
    pub staticity: f64,
    pub back_half_psnr: f64,
    /// Back-half PSNR of repeating the condition image for every frame.
    pub baseline_back_half_psnr: f64,
    pub error: Option<String>,
}

impl CharacterRow {
    fn failed(id: u64, e: &Error) -> Self {
        CharacterRow {
            id,
            psnr: f64::NAN,
            ssim: f64::NAN,
            cam_err: f64::NAN,
            smooth: f64::NAN,
            smooth_static: false,
            identity: f64::NAN,
            staticity: f64::NAN,
            back_half_psnr: f64::NAN,
            baseline_back_half_psnr: f64::NAN,
            error: Some(format!("{}:{e}", e.code())),
        }
    }
}

pub fn evaluate_case(generator: &dyn OrbitGenerator, case: &BenchmarkCase) -> Result<(CharacterRow, VideoTensor)> {
    let orbit = generator.orbit(case)?;
    let psnrs = frame_psnrs(&orbit, &case.oracle)?;
    let ssims = (0..orbit.frames())
        .map(|f| ssim(&orbit.to_frame(f)?, &case.oracle.to_frame(f)?))
        .collect::<Result<Vec<_>>>()?;
    let cam_err = camera_control_error(&[ControlCase { generated: &orbit, oracle: &case.oracle }])?;
    let smooth = orbit_smoothness(&orbit)?;
    let identity = identity_score(&case.oracle.to_frame(0)?, &orbit.to_frame(0)?)?;
    let staticity = canonical_staticity(&generator.hold(case)?)?;
    let back = back_half_frames(orbit.frames());
    let baseline = frame_psnrs(&RepeatCondition.orbit(case)?, &case.oracle)?;
    let n = psnrs.len() as f64;
    let row = CharacterRow {
        id: case.id,
        psnr: psnrs.iter().sum::<f64>() / n,
        ssim: ssims.iter().sum::<f64>() / n,
        cam_err,
        smooth: smooth.ratio,
        smooth_static: smooth.static_video,
        identity,
        staticity,
        back_half_psnr: mean_at(&psnrs, &back),
        baseline_back_half_psnr: mean_at(&baseline, &back),
        error: None,
    };
    Ok((row, orbit))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
    pub cam_err: f64,
    pub smooth: f64,
    pub identity: f64,
    #[serde(rename = "static")]
    pub staticity: f64,
    pub back_half_psnr: f64,
    pub baseline_back_half_psnr: f64,
}

impl Aggregate {
    fn fields(r: &CharacterRow) -> [f64; 8] {
        [
            r.psnr,
            r.ssim,
            r.cam_err,
            r.smooth,
            r.identity,
            r.staticity,
            r.back_half_psnr,
            r.baseline_back_half_psnr,
        ]
    }

    fn from_fields(v: [f64; 8]) -> Self {
        Aggregate {
            psnr: v[0],
            ssim: v[1],
            cam_err: v[2],
            smooth: v[3],
            identity: v[4],
            staticity: v[5],
            back_half_psnr: v[6],
            baseline_back_half_psnr: v[7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<CharacterRow>,
    /// Mean and population standard deviation over rows without errors.
    pub mean: Aggregate,
    pub std: Aggregate,
    pub failures: usize,
    #[serde(skip)]
    pub videos: Vec<Option<VideoTensor>>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<CharacterRow>, videos: Vec<Option<VideoTensor>>) -> Self {
        let ok: Vec<[f64; 8]> = rows.iter().filter(|r| r.error.is_none()).map(Aggregate::fields).collect();
        let n = ok.len() as f64;
        let mut mean = [0.0; 8];
        let mut std = [0.0; 8];
        for k in 0..8 {
            mean[k] = ok.iter().map(|f| f[k]).sum::<f64>() / n;
            std[k] = (ok.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
        }
        MetricsReport {
            failures: rows.len() - ok.len(),
            rows,
            mean: Aggregate::from_fields(mean),
            std: Aggregate::from_fields(std),
            videos,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.id, r.psnr, r.ssim, r.cam_err, r.smooth, r.identity, r.staticity
            ));
        }
        let m = &self.mean;
        s.push_str(&format!(
            "mean,{},{},{},{},{},{}\n",
            m.psnr, m.ssim, m.cam_err, m.smooth, m.identity, m.staticity
        ));
        s
    }
}

/// Scores every case; a failing case yields an error row instead of
/// aborting the run.
pub fn run_benchmark(generator: &dyn OrbitGenerator, cases: &[BenchmarkCase]) -> MetricsReport {
    let results: Vec<(CharacterRow, Option<VideoTensor>)> = cases
        .par_iter()
        .map(|c| match evaluate_case(generator, c) {
            Ok((row, video)) => (row, Some(video)),
            Err(e) => (CharacterRow::failed(c.id, &e), None),
        })
        .collect();
    let (rows, videos) = results.into_iter().unzip();
    MetricsReport::from_rows(rows, videos)
}

/// Writes `metrics.csv`, `summary.json` and, per character,
/// `frames/<id>/condition.ppm` plus `frame_XX.ppm` for the generated orbit.
pub fn write_report(report: &MetricsReport, cases: &[BenchmarkCase], out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join("metrics.csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let mut json = serde_json::to_string_pretty(report).map_err(|e| Error::FormatViolation(e.to_string()))?;
    json.push('\n');
    let summary = out.join("summary.json");
    fs::write(&summary, json).map_err(|e| Error::io(&summary, e))?;
    for (case, video) in cases.iter().zip(&report.videos) {
        let dir = out.join("frames").join(case.id.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_ppm(&dir.join("condition.ppm"), &case.condition)?;
        if let Some(v) = video {
            for f in 0..v.frames() {
                write_ppm(&dir.join(format!("frame_{f:02}.ppm")), &v.to_frame(f)?)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn back_half_excludes_quarter_turns() {
        assert_eq!(back_half_frames(16), (5..=11).collect::<Vec<_>>());
        assert_eq!(back_half_frames(8), vec![3, 4, 5]);
        assert_eq!(back_half_frames(4), vec![2]);
    }

    #[test]
    fn training_seed_ranges_are_refused() {
        let spec = BenchmarkSpec { seed_start: 10, ..BenchmarkSpec::default() };
        assert!(matches!(benchmark_cases(&spec, &SceneConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn failing_cases_become_error_rows() {
        struct Broken;
        impl OrbitGenerator for Broken {
            fn orbit(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
                if case.id % 2 == 0 {
                    Err(Error::NonFinite("test".into()))
                } else {
                    Ok(case.oracle.clone())
                }
            }
            fn hold(&self, case: &BenchmarkCase) -> Result<VideoTensor> {
                self.orbit(case)
            }
        }
        let spec = BenchmarkSpec { count: 2, ..BenchmarkSpec::default() };
        let scene = SceneConfig { height: 16, width: 16, frames: 4, ..SceneConfig::default() };
        let cases = benchmark_cases(&spec, &scene).unwrap();
        let report = run_benchmark(&Broken, &cases);
        assert_eq!(report.failures, 1);
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[0].error.as_deref().unwrap().starts_with("NonFinite:"));
        assert_eq!(report.mean.psnr, 99.0);
        assert_eq!(report.to_csv().lines().count(), 4);
    }
}
