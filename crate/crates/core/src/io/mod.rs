//! Datasets, synthetic scenes, checkpoints and image files.

pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, save_dataset, Frame, SceneDataset, Split, DEFAULT_SPLIT_RATIO};
pub use synthetic::{make_synthetic, Motion, SyntheticScene, SyntheticSpec};
