pub mod camera;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod io;
pub mod nn;
pub mod sampler;
pub mod scene;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
