//! Statistical cue discovery for multiple-choice reasoning datasets.
//!
//! The pipeline has three phases:
//!
//! 1. **Filtering**: every instance is annotated with linguistic feature
//!    values ([`annotate`]) and each feature value partitions the train and
//!    test splits ([`filter`]).
//! 2. **Cue discovery**: the filtered label distributions are scored for
//!    skew and train/test agreement, and features are ranked by cueness
//!    ([`cuescore`]).
//! 3. **Model probing**: black-box prediction files are checked for
//!    exploitation of a cue with an accuracy test and a distribution test on
//!    a label-balanced stress set ([`probe`]).
//!
//! [`pipeline`] composes the phases into the report documents written by the
//! CLI and served over HTTP; [`fixtures`] generates planted-cue datasets with
//! exact ground truth.

pub mod annotate;
pub mod corpus;
pub mod cuescore;
pub mod error;
pub mod filter;
pub mod fixtures;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod tokenize;

pub use annotate::{AnnotationSet, Annotations, FeatureKind, FeatureSpec, ResourceBundle};
pub use corpus::{Dataset, Instance, Split, TaskKind};
pub use cuescore::{CueScore, LabelDistribution};
pub use error::{Error, Result};
pub use filter::{FilteredSplit, SupportMode};
pub use probe::{PredictionSet, ProbeReport, StressSet, Verdict};
pub use tokenize::{Token, TokenizedInstance};

/// Version string embedded in run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
