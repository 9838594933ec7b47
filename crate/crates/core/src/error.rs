use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// A parameter or argument violates its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The array (or cache) is not in a state that permits the operation.
    #[error("invalid state: {0}")]
    State(String),
    /// Operations were issued out of their required order.
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("numeric guard: {0}")]
    Numeric(String),
    /// An event log cannot be tallied.
    #[error("accounting error: {0}")]
    Accounting(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)*) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::SimError::$variant(format!($($arg)*)));
        }
    };
}
pub(crate) use ensure;
