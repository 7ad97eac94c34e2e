use thiserror::Error;

pub type Result<T> = std::result::Result<T, AccountingError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountingError {
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weights sum to zero")]
    ZeroMass,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("order grids differ between curves")]
    GridMismatch,

    #[error("order {0} is not an integer >= 2")]
    NonIntegerOrder(f64),

    #[error("every order has an infinite privacy value")]
    AllInfinite,

    #[error("delta {delta} is unreachable: infinite-loss mass is {atom}")]
    Unreachable { atom: f64, delta: f64 },

    #[error("PLD spacings differ ({0} vs {1})")]
    SpacingMismatch(f64, f64),

    #[error("PLD roundings differ")]
    RoundingMismatch,

    #[error(
        "model {model} does not have independent noise; linear combination \
         accounting does not apply to correlated checkpoints"
    )]
    CorrelatedInputs { model: usize },

    #[error("combined noise scale is zero at step {step} while the update depends on the data")]
    DegenerateNoise { step: usize },

    #[error(
        "order {order} with {models} models needs {required} compositions, \
         above the enumeration cap of {cap}"
    )]
    EnumerationCapExceeded {
        order: u32,
        models: usize,
        required: u128,
        cap: u128,
    },

    #[error("delta must be < 1/2 (got {0})")]
    DeltaTooLarge(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}
