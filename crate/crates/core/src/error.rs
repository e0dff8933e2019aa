use thiserror::Error;

/// Failure modes shared by every module of the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{module}: step size underflow at t={t} (h={h:e})")]
    StepUnderflow {
        module: &'static str,
        t: f64,
        h: f64,
    },

    #[error("{module}: no convergence, achieved residual {residual:e}")]
    NonConvergence { module: &'static str, residual: f64 },

    #[error("{module}: state left the admissible region on path {path} at t={t}")]
    Divergence {
        module: &'static str,
        path: usize,
        t: f64,
    },

    #[error("levy_noise: Q({radius}) = {value} exceeds declared q_sup {bound}")]
    QSupViolated { radius: f64, value: f64, bound: f64 },

    #[error("proxy_density: mass defect {defect:e} exceeds tolerance {tolerance:e}")]
    MassDefect { defect: f64, tolerance: f64 },

    #[error("flows: mollification radius {radius:e} underflows for level ({level}, {variable})")]
    RadiusUnderflow {
        level: usize,
        variable: usize,
        radius: f64,
    },

    #[error("{module}: {message}")]
    Numerical {
        module: &'static str,
        message: String,
    },

    #[error("i/o: {0}")]
    Io(String),
}

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn numerical(module: &'static str, msg: impl Into<String>) -> Self {
        LabError::Numerical {
            module,
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
