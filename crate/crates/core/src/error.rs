use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid disorder model: {0}")]
    InvalidModel(String),
    #[error("degenerate disorder model: variance is zero")]
    Degenerate,
    #[error("disorder model has zero mean; critical-energy analysis requires a nonzero mean")]
    ZeroMean,
    #[error("critical-energy analysis requires a positive mean coupling, got {0}")]
    NonPositiveMean(f64),
    #[error("invalid site range [{lo}, {hi}]")]
    InvalidRange { lo: i64, hi: i64 },
    #[error("realization covers sites [{have_lo}, {have_hi}], need [{need_lo}, {need_hi}]")]
    RangeMismatch {
        have_lo: i64,
        have_hi: i64,
        need_lo: i64,
        need_hi: i64,
    },
    #[error("matrix is singular")]
    Singular,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("epsilon {epsilon} outside the expansion regime (max {max})")]
    Regime { epsilon: f64, max: f64 },
    #[error("budget violation: {0}")]
    Budget(String),
    #[error("epsilon grid spans {decades:.3} decades, need at least {required}")]
    GridTooNarrow { decades: f64, required: f64 },
    #[error("statistical error dominates at epsilon {epsilon}: value {value}, stderr {stderr}; about {required_samples} samples needed")]
    StatisticalNoise {
        epsilon: f64,
        value: f64,
        stderr: f64,
        required_samples: usize,
    },
    #[error("no convergence: achieved tolerance {achieved:e} (target {target:e})")]
    NonConvergence { achieved: f64, target: f64 },
    #[error("insufficient dynamic range: {0}")]
    DynamicRange(String),
}

pub type Result<T> = core::result::Result<T, Error>;
