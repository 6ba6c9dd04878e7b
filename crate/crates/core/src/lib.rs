//! Prior-guided Siamese segmentation for underwater camouflaged objects:
//! enhancement, data loading, the network, losses, training, metrics and
//! experiment orchestration.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod msrcr;
pub mod raster;
pub mod train;

/// The tensor engine the network is built on.
pub use apgnet_autograd as tensor;

pub use checkpoint::Checkpoint;
pub use config::{AblationId, ExperimentConfig, Profile};
pub use dataset::{Batch, Split};
pub use error::{Error, Result};
pub use loss::LossReport;
pub use metrics::{MetricConfig, MetricReport};
pub use model::{ApgNet, Architecture, ModelConfig, PredictionSet};
pub use msrcr::MsrcrConfig;
pub use raster::{GrayMap, RgbImage};
pub use train::{Scheme, Trainer};
