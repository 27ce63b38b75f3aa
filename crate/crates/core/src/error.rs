use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("invalid device parameters: {0}")]
    InvalidParams(String),

    #[error("state w = {w:e} m outside [{lo:e}, {hi:e}]")]
    StateOutOfBounds { w: f64, lo: f64, hi: f64 },

    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("integrator exceeded {0} substeps in one step")]
    SubstepLimit(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("time {t} s outside waveform span [0, {total}] s")]
    TimeOutOfRange { t: f64, total: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

impl Error {
    /// Stable snake_case tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidParams(_) => "invalid_params",
            Error::StateOutOfBounds { .. } => "state_out_of_bounds",
            Error::InvalidTimeStep(_) => "invalid_time_step",
            Error::SubstepLimit(_) => "substep_limit",
            Error::Config(_) => "config",
            Error::Topology(_) => "topology",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::EmptyInput(_) => "empty_input",
        }
    }
}

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}
