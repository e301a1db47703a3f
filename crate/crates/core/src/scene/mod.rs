//! Procedural characters, rendering and training-sample assembly.

pub mod background;
pub mod character;
pub mod render;
pub mod sample;

pub use background::{make_background, BackgroundFamily};
pub use character::{
    apply_pose, make_character, quality_filter, CharacterSpec, Part, PoseParams, RejectReason, Style,
    StyleFamily,
};
pub use render::{composite_background, render, render_rotated, Background};
pub use sample::{condition_image, dataset_viewpoints, make_training_sample, CharacterPool, SceneConfig, Stage, TrainingSample};
