//! Block-partitioned parallel matrix factorization.
//!
//! The rating matrix is cut into an `I x J` grid of blocks. Each outer step
//! walks a rotating schedule of conflict-free batches; blocks within a batch
//! are factorized concurrently with element-wise SGD, each block for a
//! configurable number of inner sweeps. Sequential (CMF) and synchronized
//! row-sharded (CPMF) SGD are provided as reference variants.

pub mod baselines;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod scheduler;
pub mod trainer;

pub use error::{Divergence, Error, Result};
pub use model::{
    init_factors, validate_dataset, ConvergenceTrace, FactorModel, InnerSchedule, RatingTriple, RatingsDataset,
    TraceStep, TrainConfig,
};
pub use trainer::{train_bgmf, StopReason, TrainResult, Trainer};
