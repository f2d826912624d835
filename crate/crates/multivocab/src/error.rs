//! Crate-wide error type.

use std::path::PathBuf;

use crate::clustering::ClusterId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} is not valid UTF-8 (first invalid byte at offset {byte_offset})")]
    InvalidUtf8 { path: PathBuf, byte_offset: usize },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("language id must be non-empty")]
    EmptyLanguageId,

    #[error("duplicate language id {0:?}")]
    DuplicateLanguage(String),

    #[error("at least one language is required")]
    NoLanguages,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("total_lines must be positive")]
    ZeroTotalLines,

    #[error("vocabulary entries must be non-empty strings")]
    EmptyToken,

    #[error("duplicate vocabulary token {0:?}")]
    DuplicateToken(String),

    #[error("token {token:?} has non-finite or positive log-probability {log_prob}")]
    InvalidLogProb { token: String, log_prob: f64 },

    #[error("unk token {0:?} is not a vocabulary entry")]
    MissingUnk(String),

    #[error("required character {0:?} is not a vocabulary entry")]
    MissingRequiredChar(char),

    #[error("keep_fraction must lie in (0, 1), got {0}")]
    InvalidKeepFraction(f64),

    #[error("target size {target} is below the protected set size {protected}")]
    TargetTooSmall { target: usize, protected: usize },

    #[error("cannot reach target size {target}: only {available} candidate tokens")]
    TargetUnreachable { target: usize, available: usize },

    #[error("vocabulary token {0:?} is missing from the shared lexicon")]
    TokenNotInLexicon(String),

    #[error("at least one vocabulary is required")]
    NoVocabs,

    #[error("at least {needed} vocabularies are required, got {got}")]
    TooFewVocabs { needed: usize, got: usize },

    #[error("k must be positive")]
    ZeroK,

    #[error("k = {k} exceeds the number of points {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("fingerprint dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("at least one seed is required")]
    NoSeeds,

    #[error("ladder for {language} has no points")]
    EmptyLadder { language: String },

    #[error("ladder sizes must be strictly increasing")]
    LadderNotIncreasing,

    #[error("training the size-{size} ladder point failed: {source}")]
    LadderTraining {
        size: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "ladder for {language} does not cover size {needed} \
         (covers {low}..={high}; extrapolation refused)"
    )]
    LadderRange {
        language: String,
        needed: u64,
        low: u64,
        high: u64,
    },

    #[error("chunk must be positive")]
    ZeroChunk,

    #[error("total capacity {total} cannot satisfy {languages} languages at floor {floor}")]
    InfeasibleTotal {
        total: u64,
        floor: u64,
        languages: usize,
    },

    #[error("no language can absorb the next capacity grant without ladder extrapolation")]
    AllocationStuck,

    #[error("language {0} is missing from the cluster assignment")]
    LanguageNotClustered(String),

    #[error("no corpus provided for language {0}")]
    MissingCorpus(String),

    #[error("no capacity assigned to cluster {0}")]
    MissingClusterCapacity(ClusterId),

    #[error("cluster vocabularies disagree on the unk token: {a:?} vs {b:?}")]
    InconsistentUnk { a: String, b: String },

    #[error("training cluster {cluster} failed: {source}")]
    ClusterTraining {
        cluster: ClusterId,
        #[source]
        source: Box<Error>,
    },

    #[error("baseline fertility is zero; relative difference is undefined")]
    ZeroBaselineFertility,

    #[error("coverage fraction must lie in (0, 1], got {0}")]
    InvalidCoverageFraction(f64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
