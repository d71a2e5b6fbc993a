use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {message}", path.display())]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: no instances", path.display())]
    NoInstances { path: PathBuf },

    #[error("duplicate id {id:?} in {split} split")]
    DuplicateId { split: String, id: String },

    #[error("test instance {id:?} has label {label:?} absent from the train label set")]
    UnknownTestLabel { id: String, label: String },

    #[error("question {id:?}: answer index out of range ({answer} with {choices} choices)")]
    AnswerOutOfRange {
        id: String,
        answer: i64,
        choices: usize,
    },

    #[error("question {id:?}: needs at least 2 choices, got {choices}")]
    TooFewChoices { id: String, choices: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("missing resource file {}", path.display())]
    MissingResource { path: PathBuf },

    #[error("{}: line {line}: {message}", path.display())]
    InvalidResource {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown feature kind {0:?}")]
    UnknownFeatureKind(String),

    #[error("invalid value {value:?} for feature kind {kind}")]
    InvalidFeatureValue { kind: String, value: String },

    #[error("sidecar references ids absent from the dataset: {}", .0.join(", "))]
    SidecarUnknownIds(Vec<String>),

    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),

    #[error("label distribution has zero support")]
    ZeroSupport,

    #[error("label distributions use different label sets")]
    LabelMismatch,

    #[error("predictions reference ids absent from the test split: {}", .0.join(", "))]
    UnknownPredictionIds(Vec<String>),

    #[error("duplicate prediction for id {0:?}")]
    DuplicatePrediction(String),

    #[error("question group {0:?} is incomplete in the score file")]
    IncompleteGroup(String),

    #[error("prediction for {id:?} has label {label:?} outside the label set")]
    PredictionLabel { id: String, label: String },

    #[error("missing predictions for ids: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("empty evaluation set")]
    EmptyEvaluationSet,

    #[error(
        "cannot balance stress set for {feature}: only one label present in the filtered test set"
    )]
    DegenerateStressSet { feature: String },

    #[error(
        "feature {feature} not qualified (support_mode={support_mode}, min_support={min_support})"
    )]
    FeatureNotQualified {
        feature: String,
        support_mode: String,
        min_support: usize,
    },

    #[error("degenerate fixture spec: {0}")]
    DegenerateSpec(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (bad files, flags or features)
    /// rather than by the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Json(_) => false,
            _ => true,
        }
    }
}
