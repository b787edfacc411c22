//! Style-based generator: mapping network, per-scale modulated synthesis,
//! critic and trainers.

pub mod model;
pub mod train;

pub use model::{DiscriminatorModel, GeneratorModel, GeneratorShape, StyleLayout, StyleStack, WBarMode};
pub use train::{
    column_moments, moment_distance, sample_fakes, train_gan, EncoderModel, GanTrainConfig, LogEntry, TrainedGan,
    TrainerMode, TrainingLog,
};
