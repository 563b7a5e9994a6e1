//! Nested sampling with an inner nested sampler for contour volumes.

pub mod dirichlet;
pub mod engine;
pub mod expr;
pub mod inner;
pub mod moments;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod sphere;

pub use engine::{
    run_nested_sampling, ConstrainedSampler, EngineError, NSConfig, NSObject, NSRunResult,
    SamplerError, TerminationReason, WeightedSample,
};
pub use numerics::{log_add, log_sum, LogValue};
