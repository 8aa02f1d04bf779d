use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{}: unsupported bit depth {found} (expected {expected})", path.display())]
    UnsupportedBitDepth {
        path: PathBuf,
        expected: &'static str,
        found: u8,
    },

    #[error("{}: unsupported color type {found} (expected {expected})", path.display())]
    UnsupportedColorType {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("{}: malformed PNG: {message}", path.display())]
    MalformedPng { path: PathBuf, message: String },

    #[error("bad magic {found:?} (expected \"{expected}\")")]
    BadMagic { expected: &'static str, found: [u8; 4] },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("label {value} at pixel {pixel} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        value: u8,
        pixel: usize,
        num_classes: usize,
    },

    #[error("depth image has no valid pixels")]
    Unfillable,

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("brute-force backend rejected: {pixels} pixels exceeds the limit of {limit}")]
    TooLargeForBruteForce { pixels: usize, limit: usize },

    #[error("sample {0} has no ground truth")]
    MissingGroundTruth(String),

    #[error("config parse error on line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
