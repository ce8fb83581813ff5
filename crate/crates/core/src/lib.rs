pub mod bayes;
pub mod error;
pub mod fit;
pub mod higher_order;
pub mod inference;
pub mod information;
pub mod model;
pub mod pivot;
pub mod roots;
pub mod simulation;

pub use bayes::PriorSpec;
pub use error::{Error, Result};
pub use fit::{constrained_mle, global_mle, saturated_mle_single, FitResult};
pub use higher_order::{pivot_trace, PivotTrace, TraceMode};
pub use model::{log_likelihood, ChannelData, Dataset, ModelParams, NuisancePair};
pub use pivot::{Method, PivotEngine, PivotPoint, PivotValue};
pub use inference::{analyze, InferenceReport, Side, SignificanceFunction};
pub use simulation::{coverage_study, CoverageConfig, CoverageResult};
