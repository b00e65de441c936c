use alloc::string::String;
use core::fmt;

use crate::features::Split;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite(&'static str),
    LabelOutOfRange { row: usize, col: usize, value: f32 },
    EmptyTrack,
    InvalidModality(String),
    InvalidRate { num: u32, den: u32 },
    MissingModality(String),
    FrameOutOfRange { index: usize, len: usize },
    BatchTooSmall(usize),
    InvalidConfig(String),
    MissingSplit(Split),
    MissingVideo(String),
    CoverageMismatch(String),
    SeriesTooShort(usize),
    LengthMismatch { left: usize, right: usize },
    NumericalAbort { epoch: usize, step: usize, loss: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { what, expected, found } => write!(
                f,
                "shape mismatch in {what}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::LabelOutOfRange { row, col, value } => {
                write!(f, "label {value} at ({row}, {col}) outside [0, 1]")
            }
            Error::EmptyTrack => write!(f, "track must have at least one row and one column"),
            Error::InvalidModality(name) => write!(f, "invalid modality name {name:?}"),
            Error::InvalidRate { num, den } => write!(f, "invalid rate {num}/{den}"),
            Error::MissingModality(name) => write!(f, "missing modality {name}"),
            Error::FrameOutOfRange { index, len } => {
                write!(f, "frame index {index} out of range for {len} frames")
            }
            Error::BatchTooSmall(n) => {
                write!(f, "batch of {n} rows is too small for batch normalization")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::MissingSplit(split) => write!(f, "dataset has no {} videos", split.as_str()),
            Error::MissingVideo(id) => write!(f, "missing video {id}"),
            Error::CoverageMismatch(msg) => write!(f, "coverage mismatch: {msg}"),
            Error::SeriesTooShort(n) => write!(f, "correlation needs at least 2 points, got {n}"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::NumericalAbort { epoch, step, loss } => {
                write!(f, "non-finite loss {loss} at epoch {epoch}, step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}
