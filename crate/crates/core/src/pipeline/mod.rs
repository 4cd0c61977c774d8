//! Data formats, synthetic data, model assembly and training.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;

pub use config::{OptimizerKind, TrainConfig};
pub use dataset::{load_dataset, write_dataset, Dataset, Example, QuestionInput, Target};
pub use io::{read_feature_container, write_feature_container, EmbeddingTable};
pub use model::{Model, Prediction};
pub use synth::{synth_generate, SynthData, SynthSpec};
pub use train::{evaluate, mean_alignment_entropy, train, EpochMetrics, Evaluation};
