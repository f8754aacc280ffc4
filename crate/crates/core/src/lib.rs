pub mod decode;
pub mod error;
pub mod image;
pub mod marker;
pub mod pattern;
pub mod phase;
pub mod pose;
pub mod sequence;

pub use error::{Error, ErrorClass, Result};
