use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("QBER {0} outside [0, 1)")]
    QberOutOfRange(f64),

    #[error("total QBER {0} exceeds 1; configuration rejected")]
    QberExceedsOne(f64),

    #[error("no sign change on bracket [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("operating point is already insecure at zero distance (QBER {qber:.6} >= threshold {threshold:.6})")]
    InsecureAtOrigin { qber: f64, threshold: f64 },

    #[error("calibration infeasible within parameter bounds; best max relative residual {best_residual:.4}")]
    CalibrationInfeasible { best_residual: f64 },

    #[error("calibration needs at least one observation")]
    NoObservations,

    #[error("distances must be non-negative and sorted ascending")]
    UnsortedDistances,

    #[error("expected event count {0:.3e} would overflow tally counters")]
    TallyOverflow(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
