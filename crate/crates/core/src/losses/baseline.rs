//! Alignment losses used by the FedDF- and FedMD-style baseline strategies.

use alloc::format;

use num_traits::Float;

use crate::error::{Result, SimError};
use crate::numerics::{log_softmax_rows, Matrix};

use super::{LossWithGrad, GRAD_Z_LOCAL};

/// FedDF-style consensus: mean over the batch of
/// `KL(softmax(z_avg_row) || softmax(z_local_row))`, instance-wise
/// normalization (contrast with the batch-wise FCCM). Average is frozen.
pub fn feddf_loss(z_avg: &Matrix, z_local: &Matrix) -> Result<LossWithGrad> {
    if !z_avg.same_shape(z_local) {
        return Err(SimError::Shape(format!(
            "feddf {}x{} vs {}x{}",
            z_avg.rows(),
            z_avg.cols(),
            z_local.rows(),
            z_local.cols()
        )));
    }
    let batch = z_local.rows() as f64;
    let ls_avg = log_softmax_rows(z_avg, 1.0)?;
    let ls_local = log_softmax_rows(z_local, 1.0)?;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(z_local.rows(), z_local.cols());
    for i in 0..grad.data().len() {
        let p = Float::exp(ls_avg.data()[i]);
        if p > 0.0 {
            value += p * (ls_avg.data()[i] - ls_local.data()[i]);
        }
        grad.data_mut()[i] = (Float::exp(ls_local.data()[i]) - p) / batch;
    }
    Ok(LossWithGrad::new(value / batch).with_grad(GRAD_Z_LOCAL, grad))
}

/// FedMD-style consensus: mean squared error between the local logits and
/// the frozen average, normalized by the full element count.
pub fn fedmd_loss(z_local: &Matrix, z_avg: &Matrix) -> Result<LossWithGrad> {
    if !z_avg.same_shape(z_local) {
        return Err(SimError::Shape(format!(
            "fedmd {}x{} vs {}x{}",
            z_local.rows(),
            z_local.cols(),
            z_avg.rows(),
            z_avg.cols()
        )));
    }
    let count = (z_local.rows() * z_local.cols()) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(z_local.rows(), z_local.cols());
    for i in 0..grad.data().len() {
        let d = z_local.data()[i] - z_avg.data()[i];
        value += d * d;
        grad.data_mut()[i] = 2.0 * d / count;
    }
    Ok(LossWithGrad::new(value / count).with_grad(GRAD_Z_LOCAL, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::check::check_gradient;
    use crate::losses::tests::random_matrix;
    use crate::losses::{cross_correlation_matrix, fccm_loss};
    use approx::assert_abs_diff_eq;

    #[test]
    fn feddf_zero_at_consensus() {
        let z = random_matrix(4, 5, 2000);
        assert_abs_diff_eq!(feddf_loss(&z, &z).unwrap().value, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn feddf_gradient_matches_finite_differences() {
        let z_avg = random_matrix(5, 4, 2001);
        let z = random_matrix(5, 4, 2002);
        let loss = feddf_loss(&z_avg, &z).unwrap();
        check_gradient(
            |probe| Ok(feddf_loss(&z_avg, probe)?.value),
            &z,
            loss.grad(GRAD_Z_LOCAL).unwrap(),
        )
        .unwrap();
    }

    #[test]
    fn feddf_blind_to_column_correlation_fccm_is_not() {
        // Rows equal the average: FedDF sees consensus. Columns identical:
        // FCCM still penalizes the off-diagonal correlation.
        let z = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let feddf = feddf_loss(&z, &z).unwrap();
        assert_abs_diff_eq!(feddf.value, 0.0, epsilon = 1e-14);
        let fccm = fccm_loss(&cross_correlation_matrix(&z, &z).unwrap(), 0.0051).unwrap();
        assert!(fccm.value > 0.01);
    }

    #[test]
    fn fedmd_zero_at_consensus_and_closed_form_gradient() {
        let z_avg = random_matrix(4, 3, 2003);
        assert_abs_diff_eq!(fedmd_loss(&z_avg, &z_avg).unwrap().value, 0.0, epsilon = 1e-14);

        let z = random_matrix(4, 3, 2004);
        let loss = fedmd_loss(&z, &z_avg).unwrap();
        let grad = loss.grad(GRAD_Z_LOCAL).unwrap();
        for i in 0..12 {
            let expected = 2.0 * (z.data()[i] - z_avg.data()[i]) / 12.0;
            assert_abs_diff_eq!(grad.data()[i], expected, epsilon = 1e-12);
        }
        check_gradient(|probe| Ok(fedmd_loss(probe, &z_avg)?.value), &z, grad).unwrap();
    }

    #[test]
    fn fedmd_is_scale_sensitive() {
        let z_avg = Matrix::zeros(3, 4);
        let z = random_matrix(3, 4, 2005);
        let base = fedmd_loss(&z, &z_avg).unwrap().value;
        let doubled = fedmd_loss(&z.scaled(2.0), &z_avg).unwrap().value;
        assert_abs_diff_eq!(doubled, 4.0 * base, epsilon = 1e-10);
    }
}
