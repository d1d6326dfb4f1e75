//! Dataset generation, network training and the evaluation workflow:
//! binned speckle is interpolated back to camera resolution (classically or
//! with InterNet), scored against the well-resolved pattern, and passed to
//! SpeckleNet to check how much object information survived.

pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod glyphs;
pub mod idx;
pub mod report;
pub mod training;
pub mod workflow;

pub use dataset::{generate_dataset, Dataset, DatasetConfig, DatasetManifest};
pub use error::{PipelineError, Result};
pub use evaluate::{evaluate_workflow, EvalConfig, Method};
pub use training::{train_internet, train_specklenet, InterNetConfig, SpeckleNetConfig};
pub use workflow::{run_pipeline, ExperimentConfig};
