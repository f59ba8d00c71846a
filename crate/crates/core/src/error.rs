use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cycle contains repeated state {state}")]
    RepeatedCycleState { state: usize },

    #[error("context length {got} exceeds learner max_context {max}")]
    ContextOverflow { got: usize, max: usize },

    #[error("non-finite loss at position {position}")]
    NonFiniteLoss { position: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("symbol {symbol} outside distribution table of size {table}")]
    SymbolOutOfRange { symbol: usize, table: usize },

    #[error("alphabet of {symbols} symbols does not fit precision {precision}")]
    AlphabetTooLarge { symbols: usize, precision: u32 },

    #[error("zero probability at realized symbol {position}")]
    ZeroProbability { position: usize },

    #[error("bitstream exhausted while decoding")]
    StreamExhausted,

    #[error("malformed bitstream: {0}")]
    MalformedStream(String),

    #[error("curve grids differ: {0}")]
    GridMismatch(String),

    #[error("response format not parseable: {0:?}")]
    ProbeFormat(String),

    #[error("probe retries exhausted after {attempts} attempts")]
    RetriesExhausted { attempts: usize },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
