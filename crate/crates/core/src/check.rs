//! Central finite-difference gradient checking.
//!
//! Every loss ships a hand-derived backward; these helpers compare it against
//! a two-point central difference, which stays independent of the analytic
//! path by construction. Used by the unit tests, the acceptance suite, and
//! the CLI `verify` battery.

use alloc::format;
use alloc::string::String;

use crate::error::Result;
use crate::numerics::Matrix;

/// Step used by all central-difference probes.
pub const FD_STEP: f64 = 1e-5;

/// Relative tolerance for analytic-vs-numeric agreement.
pub const FD_RTOL: f64 = 1e-4;

/// Absolute floor below which disagreement is indistinguishable from
/// finite-difference noise.
pub const FD_ATOL: f64 = 1e-7;

/// Central finite difference of `f` at `at`, one probe per entry.
pub fn central_difference(
    mut f: impl FnMut(&Matrix) -> Result<f64>,
    at: &Matrix,
    step: f64,
) -> Result<Matrix> {
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for i in 0..at.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// `Err` with the worst offending entry if any element violates
/// `|a - n| <= atol + rtol * max(|a|, |n|)`.
pub fn compare_gradients(
    analytic: &Matrix,
    numeric: &Matrix,
    rtol: f64,
    atol: f64,
) -> core::result::Result<(), String> {
    assert!(analytic.same_shape(numeric));
    let mut worst: Option<(usize, f64)> = None;
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let err = (a - n).abs() - atol - rtol * a.abs().max(n.abs());
        if err > 0.0 && worst.is_none_or(|(_, w)| err > w) {
            worst = Some((i, err));
        }
    }
    match worst {
        None => Ok(()),
        Some((i, _)) => Err(format!(
            "gradient mismatch at flat index {i}: analytic {} vs numeric {}",
            analytic.data()[i],
            numeric.data()[i]
        )),
    }
}

/// Run a full check of an analytic gradient against central differences at
/// the default step and tolerances.
pub fn check_gradient(
    f: impl FnMut(&Matrix) -> Result<f64>,
    at: &Matrix,
    analytic: &Matrix,
) -> core::result::Result<(), String> {
    let numeric = central_difference(f, at, FD_STEP).map_err(|e| format!("{e}"))?;
    compare_gradients(analytic, &numeric, FD_RTOL, FD_ATOL)
}
