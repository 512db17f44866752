//! On-disk formats. All of them are plain text with a versioned magic first
//! line; floating-point values round-trip bit-exactly through Rust's
//! shortest-representation `Display`.

pub mod csv;
pub mod dataset;
pub mod manifest;
pub mod matrix;
pub mod model;

use std::io;
use std::path::Path;

/// Write atomically: temp file in the same directory, then rename.
pub(crate) fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
