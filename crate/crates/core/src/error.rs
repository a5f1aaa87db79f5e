use thiserror::Error;

/// Error type shared by all toolkit modules.
#[derive(Error, Debug)]
pub enum FsvError {
    #[error("audio too short: {got} samples, need at least {need}")]
    AudioTooShort { got: usize, need: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate cohort: {0}")]
    DegenerateCohort(String),

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("missing cohort scores for utterance '{0}'")]
    MissingCohort(String),

    #[error("trial misalignment: {0}")]
    TrialMismatch(String),

    #[error("missing class in labeled scores: {0}")]
    MissingClass(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("stage '{stage}' failed{}: {cause}", utterance.as_ref().map(|u| format!(" on utterance '{u}'")).unwrap_or_default())]
    Stage {
        stage: String,
        utterance: Option<String>,
        cause: Box<FsvError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FsvError {
    pub fn config(msg: impl Into<String>) -> Self {
        FsvError::Config(msg.into())
    }

    pub fn in_stage(self, stage: &str, utterance: Option<&str>) -> Self {
        FsvError::Stage {
            stage: stage.to_string(),
            utterance: utterance.map(|s| s.to_string()),
            cause: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, FsvError>;
