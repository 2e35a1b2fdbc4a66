use thiserror::Error;

/// Errors raised by the model, the diagnostics and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("population extinct at t = {time}: N = {population:e} is below the floor {floor:e}")]
    ExtinctPopulation {
        time: f64,
        population: f64,
        floor: f64,
    },

    #[error("non-finite value in {what} at t = {time}")]
    NonFiniteState { what: &'static str, time: f64 },

    #[error("simulation failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<ModelError>,
    },

    #[error("infeasible start: every probe around the initial policy violates K >= 0; raise K0 or lower consumption")]
    InfeasibleStart,
}

impl ModelError {
    pub fn config(msg: impl Into<String>) -> Self {
        ModelError::Config(msg.into())
    }

    /// Step index of the failure, if the error came out of `simulate`.
    pub fn step_index(&self) -> Option<usize> {
        match self {
            ModelError::Step { step, .. } => Some(*step),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
