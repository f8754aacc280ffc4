//! Library side of the `dotphase` command: configuration, guideline checks,
//! the four verbs and their output records.

pub mod bench;
pub mod commands;
pub mod config;
pub mod guidelines;

use dotphase::ErrorClass;
use serde::Serialize;

pub use bench::{bench_csv, run_bench, BenchRow};
pub use commands::{
    estimate_csv, estimate_file, estimate_image, render_scene, write_layout, write_render,
    EstimateRecord, LayoutRecord, Sidecar,
};
pub use config::{JobConfig, MarkerConfig, OutputFormat};
pub use guidelines::{CheckStatus, GuidelineReport};

/// Version of every JSON record this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DETECTION: i32 = 3;
    pub const DECODE: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(dotphase::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dotphase::Error> for CliError {
    fn from(e: dotphase::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => exit::CONFIG,
                ErrorClass::Io => exit::IO,
                ErrorClass::Detection => exit::DETECTION,
                ErrorClass::Decode => exit::DECODE,
            },
        }
    }

    pub fn class(&self) -> &'static str {
        match self.exit_code() {
            exit::CONFIG => "config",
            exit::IO => "io",
            exit::DETECTION => "detection",
            _ => "decode",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "InvalidConfig",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            schema_version: SCHEMA_VERSION,
            status: "error",
            class: self.class(),
            code: self.code(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub schema_version: u32,
    pub status: &'static str,
    pub class: &'static str,
    pub code: &'static str,
    pub message: String,
    pub exit_code: i32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        use dotphase::Error;
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(Error::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::NoLatticeFound { ratio: 1.0 }).exit_code(), 3);
        assert_eq!(CliError::from(Error::NoMarkerFound).exit_code(), 3);
        assert_eq!(CliError::from(Error::DecodeFailed("x".into())).exit_code(), 4);
        assert_eq!(
            CliError::from(Error::FewerThanMinimumCells { visible: 2, required: 3 }).exit_code(),
            4
        );
        assert_eq!(CliError::from(Error::UnsupportedFormat("x".into())).exit_code(), 5);
        let r = CliError::from(Error::NoLatticeFound { ratio: 1.0 }).record();
        assert_eq!((r.class, r.code, r.exit_code), ("detection", "NoLatticeFound", 3));
    }
}
