//! Noise-free protection of speech recordings against voice cloning.

pub mod audio;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod json;
pub mod livemask;
pub mod seed;
pub mod reverb;
pub mod specmask;
pub mod styler;
pub mod toyspeech;

pub use error::{Error, ErrorCategory, Result};
