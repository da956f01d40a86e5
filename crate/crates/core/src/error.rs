use alloc::string::String;

/// Errors raised anywhere in the re-alignment pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },
    #[error("response sequence is empty")]
    EmptyResponse,
    #[error("prompt sequence is empty")]
    EmptyPrompt,
    #[error("unknown tag: axis `{axis}`, label `{label}`{}", pair_suffix(*.pair_id))]
    UnknownTag {
        axis: String,
        label: String,
        pair_id: Option<u64>,
    },
    #[error("no compliant correction template for axis `{axis}`")]
    NoCorrectionAvailable { axis: String },
    #[error("non-finite value in {context}")]
    NumericalError { context: String },
    #[error("gold batch is empty")]
    EmptyGoldBatch,
    #[error("invalid gold batch size {0}; must be at least 1")]
    InvalidBatchSize(usize),
    #[error("pair {id} is a Retain sample, not a conflict sample")]
    NotAConflictSample { id: u64 },
    #[error("gradient dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no corrective response for punish pair {id}")]
    MissingCorrection { id: u64 },
    #[error("no impact weight for punish pair {id}")]
    MissingWeight { id: u64 },
    #[error("axis `{axis}` cannot produce the required verdicts from its templates")]
    UnsatisfiableAxis { axis: String },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("runs are not comparable: {0}")]
    IncomparableRuns(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

fn pair_suffix(pair_id: Option<u64>) -> String {
    match pair_id {
        Some(id) => alloc::format!(" (pair {id})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>) -> Self {
        Error::NumericalError {
            context: context.into(),
        }
    }

    /// True for errors that stem from non-finite arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalError { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;
