use thiserror::Error;

use crate::numerics::{QuadError, RootError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("margin has infinite mean (theta = {theta} <= 1)")]
    InfiniteMean { theta: f64 },

    #[error(transparent)]
    Root(#[from] RootError),

    #[error(transparent)]
    Quadrature(#[from] QuadError),

    /// The inner minimisation of the dual bound found no interior root of
    /// `h(s, .)`; the lower end of the `s` interval has to be increased.
    #[error("s = {s} is too small: h(s, t) has no root in (0, s/d); increase the lower end of the s interval")]
    STooSmall { s: f64 },

    /// Root-finding interval whose end points do not bracket a sign change.
    #[error("{what}: no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    Interval {
        what: &'static str,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("non-finite quantile {value} at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize, value: f64 },

    #[error("brute-force maximin refused for N = {n}, d = {d} (limits N <= 6, d <= 4)")]
    TooLarge { n: usize, d: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("confidence level alpha = {alpha} not in (0, 1)")))
    }
}
