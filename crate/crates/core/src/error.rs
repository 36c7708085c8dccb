use std::path::PathBuf;

use crate::grid::Coord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image size {height}x{width} is not a multiple of patch size {patch_size}")]
    NonMultipleDimensions {
        height: usize,
        width: usize,
        patch_size: usize,
    },
    #[error("patch size {0} must be even and at least 2")]
    OddPatchSize(usize),
    #[error("coordinate {0} lies outside the {1}x{2} patch grid")]
    OutOfGrid(Coord, usize, usize),
    #[error("cannot compute moments of an empty patch")]
    EmptyPatch,
    #[error("cannot compute moments of an empty image")]
    EmptyImage,
    #[error("moment table entry {0} written twice")]
    DuplicateWrite(Coord),
    #[error("moment table entry {0} read before it was written")]
    MissingEntry(Coord),
    #[error("standard deviation {0} is not positive")]
    NonPositiveSigma(f64),
    #[error("granularity {granularity} does not divide patch size {patch_size}")]
    BadGranularity {
        granularity: usize,
        patch_size: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("failed to decode {path}: {message}")]
    DecodeError { path: PathBuf, message: String },
    #[error("cannot reflect-pad a {height}x{width} image by ({pad_bottom}, {pad_right})")]
    TooSmallToPad {
        height: usize,
        width: usize,
        pad_bottom: usize,
        pad_right: usize,
    },
    #[error("tile {0} is missing")]
    MissingTile(Coord),
    #[error("tile {0} was supplied twice")]
    DuplicateTile(Coord),
    #[error("malformed moment table: {0}")]
    MalformedTable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the prefetch/inference ordering contract.
    pub fn is_protocol_violation(&self) -> bool {
        matches!(self, Error::MissingEntry(_) | Error::DuplicateWrite(_))
    }

    /// True for failures that originate in reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::DecodeError { .. } | Error::UnsupportedFormat(_)
        )
    }
}
