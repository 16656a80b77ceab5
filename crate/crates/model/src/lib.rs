//! ExpNet-style hierarchical classifier built on the tensor substrate:
//! saliency fields (nefirf), gaze-shift stages, the assembled network,
//! configs, and checkpoints.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod gaze;
pub mod kv;
pub mod nefirf;
pub mod net;
pub mod params;

pub use config::{AblationToggles, FusionMode, ModelConfig};
pub use error::ModelError;
pub use gaze::SaliencyMode;
pub use nefirf::SaliencyMap;
pub use net::ExpNetOutput;
pub use params::ExpNetParams;
