//! Minimal dense linear algebra over 64-bit reals.
//!
//! [`Matrix`] is the universal carrier for logits, features, similarity and
//! correlation matrices, and network parameters. All operations are pure
//! functions over immutable inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};
use num_traits::Float;

use crate::error::{Result, SimError};

/// Guard added inside every division and log argument so degenerate inputs
/// (zero-variance columns, zero probabilities) stay finite.
pub const EPS: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SimError::Shape(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(SimError::Shape(String::from("ragged row lengths")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(SimError::Shape(format!(
                "elementwise op on {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += factor * other`; shapes must already match.
    pub fn add_scaled_in_place(&mut self, other: &Self, factor: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// New matrix from the given row indices, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len(), self.cols);
        for (i, &r) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, s) in sums.iter_mut().enumerate() {
                *s += self[(r, c)];
            }
        }
        sums
    }

    /// Largest absolute elementwise difference; matrices must share a shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Standard matrix product; result is `a.rows x b.cols`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(SimError::Shape(format!(
            "matmul {}x{} . {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax of `z / temperature`, computed with max-subtraction.
pub fn softmax_rows(z: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(SimError::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let mut out = Matrix::zeros(z.rows, z.cols);
    for r in 0..z.rows {
        let row = z.row(r);
        let max = row
            .iter()
            .map(|v| v / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
            let e = Float::exp(v / temperature - max);
            *o = e;
            sum += e;
        }
        for o in out.row_mut(r) {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Row-wise log-softmax of `z / temperature` via the log-sum-exp route.
/// Never underflows, so `exp` of the result and the result itself are a
/// consistent (probability, log-probability) pair even for saturated rows.
pub fn log_softmax_rows(z: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(SimError::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let mut out = Matrix::zeros(z.rows, z.cols);
    for r in 0..z.rows {
        let row = z.row(r);
        let max = row
            .iter()
            .map(|v| v / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + Float::ln(
                row.iter()
                    .map(|v| Float::exp(v / temperature - max))
                    .sum::<f64>(),
            );
        for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
            *o = v / temperature - lse;
        }
    }
    Ok(out)
}

/// Column-wise standardization: subtract the column mean, then divide by the
/// root-sum-of-squares of the centered column plus [`EPS`]. Constant columns
/// map to the zero column.
pub fn batch_standardize(z: &Matrix) -> Result<Matrix> {
    if z.rows < 2 {
        return Err(SimError::Shape(format!(
            "batch standardization needs >= 2 rows, got {}",
            z.rows
        )));
    }
    let mut out = z.clone();
    for c in 0..z.cols {
        let mean = (0..z.rows).map(|r| z[(r, c)]).sum::<f64>() / z.rows as f64;
        let mut ss = 0.0;
        for r in 0..z.rows {
            let v = z[(r, c)] - mean;
            out[(r, c)] = v;
            ss += v * v;
        }
        let denom = Float::sqrt(ss) + EPS;
        for r in 0..z.rows {
            out[(r, c)] /= denom;
        }
    }
    Ok(out)
}

/// Sum over rows of `KL(p_row || q_row)`, with `0 ln(0/.) := 0` and `q`
/// clamped to [`EPS`]. Rows of both inputs must be probability vectors.
pub fn kl_divergence_rows(p: &Matrix, q: &Matrix) -> Result<f64> {
    if !p.same_shape(q) {
        return Err(SimError::Shape(format!(
            "KL on {}x{} vs {}x{}",
            p.rows, p.cols, q.rows, q.cols
        )));
    }
    for (name, m) in [("p", p), ("q", q)] {
        for r in 0..m.rows {
            let row = m.row(r);
            if row.iter().any(|&v| v < 0.0) {
                return Err(SimError::Parameter(format!(
                    "{name} row {r} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SimError::Parameter(format!(
                    "{name} row {r} sums to {sum}, not 1"
                )));
            }
        }
    }
    let mut total = 0.0;
    for r in 0..p.rows {
        for (pv, qv) in p.row(r).iter().zip(q.row(r)) {
            if *pv > 0.0 {
                total += pv * Float::ln(pv / qv.max(EPS));
            }
        }
    }
    Ok(total)
}

/// Index of the row maximum; ties break toward the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
