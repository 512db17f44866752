//! Correlation-matrix dumps: a plain `C x C` grid, fixed 6-decimal
//! formatting, one row per line. Suitable for external plotting.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hetfed_core::{Matrix, Result, SimError};

use super::write_atomic;

pub fn format_correlation_matrix(values: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..values.rows() {
        for c in 0..values.cols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.6}", values[(r, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn dump_correlation_matrix(values: &Matrix, path: &Path) -> io::Result<()> {
    write_atomic(path, &format_correlation_matrix(values))
}

/// Parse a dumped grid back into a matrix (6-decimal precision).
pub fn parse_correlation_matrix(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: core::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        rows.push(row.map_err(|e| {
            SimError::Parameter(format!("matrix dump line {}: {e}", i + 1))
        })?);
    }
    Matrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_matrix_layout() {
        let mut m = Matrix::filled(3, 3, -1.0);
        for i in 0..3 {
            m[(i, i)] = 1.0;
        }
        let text = format_correlation_matrix(&m);
        assert_eq!(
            text,
            "1.000000 -1.000000 -1.000000\n-1.000000 1.000000 -1.000000\n-1.000000 -1.000000 1.000000\n"
        );
    }

    #[test]
    fn round_trip_within_print_precision() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 0)] = 0.1234567;
        m[(0, 1)] = -0.9999994;
        m[(1, 0)] = 1.0;
        m[(1, 1)] = -0.000001;
        let parsed = parse_correlation_matrix(&format_correlation_matrix(&m)).unwrap();
        assert!(m.max_abs_diff(&parsed) <= 1e-6);
    }

    #[test]
    fn formatting_is_deterministic() {
        let m = Matrix::filled(2, 2, 0.5);
        assert_eq!(format_correlation_matrix(&m), format_correlation_matrix(&m));
    }
}
