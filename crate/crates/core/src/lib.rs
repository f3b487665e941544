//! Pixel-level crack detection with connectivity maps and a conditional
//! Wasserstein GAN.
//!
//! A generator predicts eight neighbor-connectivity maps per pixel; maps
//! are decoded to a crack mask, small connected components are removed, and
//! the result is scored against ground truth with a pixel tolerance.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod connmap;
pub mod data_io;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradsuite;
pub mod inference;
mod mask;
pub mod models;
pub mod trainer;

use std::path::Path;

pub use error::{Error, Result};
pub use mask::BinaryMask;

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
