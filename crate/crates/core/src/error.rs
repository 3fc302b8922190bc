use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dose {dose} is outside the model domain [{lower}, {upper}]")]
    Domain { dose: f64, lower: f64, upper: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("MED is not differentiable here: {0}")]
    NonDifferentiable(String),

    #[error("prior elicitation failed: {0}")]
    Elicitation(String),

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
