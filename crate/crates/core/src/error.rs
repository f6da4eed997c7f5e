use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by every routine in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on a dimension (`what` names the operand).
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A vector whose direction is needed has zero norm.
    ZeroNorm { what: &'static str, index: usize },
    /// A value that must be finite is NaN or infinite.
    NonFinite { what: &'static str, index: usize },
    /// Training produced a non-finite loss.
    Diverged { epoch: usize },
    /// A required input is empty.
    Empty(&'static str),
    /// A class has no samples where at least one is needed.
    EmptyClass(usize),
    /// A label refers to a class that does not exist.
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    /// Class names are not unique.
    DuplicateName(String),
    /// A scalar argument is outside its admissible range.
    InvalidArgument(String),
    /// A covariance matrix has no usable spectrum.
    DegenerateCovariance(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected dimension {expected}, found {found}"),
            Error::ZeroNorm { what, index } => write!(f, "{what} row {index} has zero norm"),
            Error::NonFinite { what, index } => {
                write!(f, "{what} has a non-finite value at position {index}")
            }
            Error::Diverged { epoch } => write!(f, "loss became non-finite at epoch {epoch}"),
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::EmptyClass(c) => write!(f, "class {c} has no samples"),
            Error::LabelOutOfRange {
                index,
                label,
                classes,
            } => write!(
                f,
                "label {label} at row {index} is out of range for {classes} classes"
            ),
            Error::DuplicateName(name) => write!(f, "duplicate class name {name:?}"),
            Error::InvalidArgument(msg) => f.write_str(msg),
            Error::DegenerateCovariance(side) => {
                write!(f, "{side} covariance is degenerate even after ridge")
            }
        }
    }
}

impl core::error::Error for Error {}
