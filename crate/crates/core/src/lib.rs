//! Discovering and evaluating concept directions in a generative model's
//! latent space from factual/counterfactual pairs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concept_metrics;
pub mod distribution_metrics;
pub mod error;
pub mod latent_diff;
pub mod pipeline;
pub mod report;
pub mod sphere_cluster;
pub mod synth_oracle;
pub mod tcav;
pub mod tensor_io;
pub mod traversal;

pub use error::{Error, ErrorClass, Result};
pub use latent_diff::UnitMatrix;
pub use pipeline::{run_pipeline, PipelineConfig, RunOptions};
pub use report::EvalReport;
pub use sphere_cluster::{ClusterModel, DirectionSet, KMeansConfig};
pub use tensor_io::{LatentMatrix, PairManifest};
pub use traversal::{AlphaSweep, ProbTable};
