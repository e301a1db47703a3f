//! Novel-view metrics, controllability and consistency proxies, and the
//! held-out orbit benchmark.

mod benchmark;
mod metrics;

pub use benchmark::{
    back_half_frames, benchmark_cases, evaluate_case, run_benchmark, write_report, Aggregate, BenchmarkCase,
    BenchmarkSpec, CharacterRow, MetricsReport, ModelGenerator, OracleGenerator, OrbitGenerator, RepeatCondition,
    HELD_OUT_SEED_START, REPORT_HEADER,
};
pub use metrics::{
    camera_control_error, canonical_staticity, identity_score, mse, orbit_smoothness, psnr, psnr_from_mse, ssim,
    ControlCase, Image, Smoothness, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};
