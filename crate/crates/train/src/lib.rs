//! Training harness: synthetic dataset generation and I/O, the AdamW
//! optimizer, and seeded training/evaluation loops.

pub mod config;
pub mod dataset;
pub mod error;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use config::{Regime, SyntheticSpec, TrainConfig};
pub use dataset::{Dataset, GroundTruth, Sample};
pub use error::TrainError;
pub use optim::AdamW;
pub use trainer::{evaluate, predict, split_indices, train, Evaluation, TrainOutcome};
