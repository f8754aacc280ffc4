use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("color images are not supported: {0}")]
    ColorImage(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("taps {taps:?} are not primitive for n={n}: period {period}, expected {expected}")]
    NonPrimitiveTaps {
        n: u32,
        taps: Vec<u32>,
        period: usize,
        expected: usize,
    },
    #[error("window {window:#b} occurs at positions {first} and {second}")]
    DuplicateWindow {
        window: u32,
        first: usize,
        second: usize,
    },
    #[error("extent of {extent} codes exceeds sequence length {length}")]
    ExtentTooLarge { extent: usize, length: usize },
    #[error("marker id {id} does not fit in {capacity} reserved bits")]
    IdOverflow { id: u32, capacity: usize },

    #[error("no dot lattice found in spectrum (peak/median ratio {ratio:.2})")]
    NoLatticeFound { ratio: f64 },
    #[error("spectral peaks are not orthogonal (separation {separation:.3} rad)")]
    NonOrthogonalLattice { separation: f64 },
    #[error("phase plane fit degenerate (weighted rms residual {rms:.3} rad)")]
    FitDegenerate { rms: f64 },

    #[error("only {visible} visible periods along an axis, {required} required")]
    FewerThanMinimumCells { visible: usize, required: usize },
    #[error("no dot contrast anywhere in the sampled grid")]
    DegenerateClustering,
    #[error("coding line phase is ambiguous")]
    AmbiguousCodingPhase,
    #[error("absolute decode failed: {0}")]
    DecodeFailed(String),
    #[error("{valid} orientation hypotheses decode consistently")]
    AmbiguousDecode { valid: usize },
    #[error("{valid} glyph rotations validate, expected exactly one")]
    GlyphAmbiguous { valid: usize },
    #[error("no marker found in image")]
    NoMarkerFound,
    #[error("marker region is not inside the frame with a {margin} px margin")]
    RegionOutsideFrame { margin: f64 },
}

/// Coarse classification used by front ends to map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Detection,
    Decode,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::UnsupportedFormat(_) | Error::ColorImage(_) => ErrorClass::Io,
            Error::InvalidArgument(_)
            | Error::NonPrimitiveTaps { .. }
            | Error::DuplicateWindow { .. }
            | Error::ExtentTooLarge { .. }
            | Error::IdOverflow { .. } => ErrorClass::Config,
            Error::NoLatticeFound { .. }
            | Error::NonOrthogonalLattice { .. }
            | Error::FitDegenerate { .. }
            | Error::NoMarkerFound
            | Error::RegionOutsideFrame { .. } => ErrorClass::Detection,
            Error::FewerThanMinimumCells { .. }
            | Error::DegenerateClustering
            | Error::AmbiguousCodingPhase
            | Error::DecodeFailed(_)
            | Error::AmbiguousDecode { .. }
            | Error::GlyphAmbiguous { .. } => ErrorClass::Decode,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::ColorImage(_) => "ColorImage",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::NonPrimitiveTaps { .. } => "NonPrimitiveTaps",
            Error::DuplicateWindow { .. } => "DuplicateWindow",
            Error::ExtentTooLarge { .. } => "ExtentTooLarge",
            Error::IdOverflow { .. } => "IdOverflow",
            Error::NoLatticeFound { .. } => "NoLatticeFound",
            Error::NonOrthogonalLattice { .. } => "NonOrthogonalLattice",
            Error::FitDegenerate { .. } => "FitDegenerate",
            Error::FewerThanMinimumCells { .. } => "FewerThanMinimumCells",
            Error::DegenerateClustering => "DegenerateClustering",
            Error::AmbiguousCodingPhase => "AmbiguousCodingPhase",
            Error::DecodeFailed(_) => "DecodeFailed",
            Error::AmbiguousDecode { .. } => "AmbiguousDecode",
            Error::GlyphAmbiguous { .. } => "GlyphAmbiguous",
            Error::NoMarkerFound => "NoMarkerFound",
            Error::RegionOutsideFrame { .. } => "RegionOutsideFrame",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
