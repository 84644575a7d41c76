use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: no segments")]
    EmptyLine { line: usize },

    #[error("reserved symbol {0:?} cannot be used as a segment")]
    ReservedSymbol(String),

    #[error("duplicate symbol {0:?} in alphabet")]
    DuplicateSymbol(String),

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("symbol id {0} out of range")]
    SymbolOutOfRange(usize),

    #[error("unknown unicode script {0:?}")]
    UnknownScript(String),

    #[error("no types survived filtering")]
    NoTypes,

    #[error("lexicon too small: {got} words, need at least {need}")]
    LexiconTooSmall { got: usize, need: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("position {position} out of range for length {length}")]
    PositionOutOfRange { position: usize, length: usize },

    #[error("prefix not observed in training data")]
    UnobservedPrefix,

    #[error("measure {measure} cannot be computed with a {family} model")]
    MeasureMismatch { measure: String, family: String },

    #[error(
        "word {0} is not a training type: plug-in trie surprisal is undefined on held-out words"
    )]
    HeldOutTrie(usize),

    #[error("infinite surprisal for word {word} at position {position}")]
    InfiniteSurprisal { word: usize, position: usize },

    #[error("alphabet mismatch: checkpoint hash {expected}, lexicon hash {found}")]
    AlphabetMismatch { expected: String, found: String },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("empty selection")]
    EmptySelection,

    #[error("need at least {need} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("all word lengths are equal; slope is undefined")]
    ConstantLength,

    #[error("no position reaches coverage {0}")]
    NoCoveredPosition(f64),

    #[error("record sets come from different splits: {0}")]
    MismatchedSplits(String),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure is numeric (divergence, non-finite values) rather
    /// than a problem with the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient(_) | Error::Divergence { .. } | Error::InfiniteSurprisal { .. }
        )
    }
}
