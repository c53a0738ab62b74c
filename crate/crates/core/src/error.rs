use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("row {0} has (near-)zero Euclidean norm")]
    ZeroNormRow(usize),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("similarity entry ({row}, {col}) = {value} outside the cosine range")]
    SimilarityOutOfRange { row: usize, col: usize, value: f64 },

    #[error("batch size {0} is too small; at least 2 items are needed for a hardest negative")]
    BatchTooSmall(usize),

    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperParameter(String),

    #[error("activation cache does not match: {0}")]
    CacheMismatch(String),

    #[error("epoch {epoch} outside the schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("ranking needs at least one candidate")]
    EmptyCandidates,

    #[error(
        "target index {index} is out of bounds for {len} candidates (or the target set is empty)"
    )]
    InvalidTarget { index: usize, len: usize },

    #[error("invalid retrieval index: {0}")]
    InvalidIndex(String),

    #[error(
        "audio {audio} owns {captions} captions but only {batches} batches fit; \
         a collision-free batch plan is impossible"
    )]
    InfeasibleConstraint {
        audio: usize,
        captions: usize,
        batches: usize,
    },

    #[error("dataset has {pairs} pairs, fewer than the batch size {batch_size}")]
    InsufficientPairs { pairs: usize, batch_size: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("dataset has no `{0}` split")]
    MissingSplit(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("split `{split}`: pair (text_id={text_id}, audio_id={audio_id}) references a missing {side} row")]
    DanglingPairReference {
        split: String,
        text_id: u64,
        audio_id: u64,
        side: &'static str,
    },

    #[error("split `{split}`: text {text_id} is paired more than once")]
    DuplicateTextPairing { split: String, text_id: u64 },

    #[error("split `{split}`: text {text_id} has no pair record")]
    UnpairedText { split: String, text_id: u64 },

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("all {0} runs failed")]
    AllRunsFailed(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Json(_)
            | Error::DimMismatch(_)
            | Error::InvalidHyperParameter(_)
            | Error::InvalidSpec(_)
            | Error::EpochOutOfRange { .. } => 2,
            Error::MissingFile(_)
            | Error::MissingSplit(_)
            | Error::DanglingPairReference { .. }
            | Error::DuplicateTextPairing { .. }
            | Error::UnpairedText { .. }
            | Error::Format { .. }
            | Error::InfeasibleConstraint { .. }
            | Error::InsufficientPairs { .. }
            | Error::InvalidIndex(_)
            | Error::ShapeMismatch { .. } => 3,
            Error::NonFinite(_)
            | Error::NonFiniteLoss { .. }
            | Error::AllRunsFailed(_)
            | Error::ZeroNormRow(_)
            | Error::SimilarityOutOfRange { .. } => 4,
            _ => 1,
        }
    }
}
