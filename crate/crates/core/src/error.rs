use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A model parameter is outside its valid domain.
    InvalidParameter(&'static str),
    /// An argument violates an operation's precondition.
    InvalidArgument(&'static str),
    /// Geometry that the channel model cannot evaluate (e.g. coincident points).
    InvalidGeometry(&'static str),
    /// No layer is detectable at the receiver position.
    Outage,
    /// The truncated-Gaussian parameter search did not converge.
    CalibrationFailed { peak: f64, cap: f64 },
    /// An assignment or scenario has no feasible solution.
    Infeasible(&'static str),
    /// Two positions cannot be compared (different detectable layer sets).
    IncompatiblePositions,
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::InvalidGeometry(what) => write!(f, "invalid geometry: {what}"),
            Error::Outage => f.write_str("no detectable layer at this position"),
            Error::CalibrationFailed { peak, cap } => write!(
                f,
                "truncated-Gaussian calibration failed (peak {peak}, mean cap {cap})"
            ),
            Error::Infeasible(what) => write!(f, "infeasible: {what}"),
            Error::IncompatiblePositions => {
                f.write_str("positions have different detectable layer sets")
            }
        }
    }
}

impl core::error::Error for Error {}
