//! Label supervision and snapshot distillation for local updating.
//!
//! Plain logits distillation splits exactly into a target-class term and a
//! non-target term. The target term's gradient on the target logit,
//! `tau (p_S^t - p_T^t)`, can oppose the cross-entropy pull whenever the
//! teacher is less confident than the student. FNTD therefore drops the
//! target term; in its renormalized form the remaining loss is a KL between
//! distributions over the non-target classes only, which leaves the target
//! logit's gradient exactly zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Result, SimError};
use crate::numerics::{log_softmax_rows, softmax_rows, Matrix};

use super::{LossWithGrad, GRAD_Z_STUDENT};

/// Which form of non-target distillation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FntdVariant {
    /// Softmax over the non-target logits only. The target logit drops out
    /// of the loss entirely, so its gradient is zero by construction.
    #[default]
    Renormalized,
    /// Non-target sum over the full softmax. Keeps a residual target-logit
    /// gradient of `p_S^t (1 - p_T^t) / tau`.
    Literal,
}

fn validate_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(SimError::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            rows
        )));
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(SimError::Parameter(format!(
                "label {label} at row {i} out of range for {classes} classes"
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy of logits against integer labels.
/// Gradient per row is `(softmax(z) - onehot) / B`.
pub fn ce_loss(z: &Matrix, labels: &[usize]) -> Result<LossWithGrad> {
    validate_labels(labels, z.rows(), z.cols())?;
    let batch = z.rows();
    let probs = softmax_rows(z, 1.0)?;
    let mut value = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        // log softmax via the stable log-sum-exp route
        let row = z.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + Float::ln(row.iter().map(|v| Float::exp(v - max)).sum::<f64>());
        value -= row[label] - lse;
    }
    value /= batch as f64;

    let mut grad = probs.scaled(1.0 / batch as f64);
    for (b, &label) in labels.iter().enumerate() {
        grad[(b, label)] -= 1.0 / batch as f64;
    }
    Ok(LossWithGrad::new(value).with_grad(GRAD_Z_STUDENT, grad))
}

/// Logits distillation: mean over the batch of
/// `KL(softmax(z_T / tau) || softmax(z_S / tau))`; the teacher is constant.
/// With `scale_tau_sq`, value and gradient carry the conventional `tau^2`
/// factor used when mixing with cross-entropy.
pub fn kd_loss(
    z_teacher: &Matrix,
    z_student: &Matrix,
    tau: f64,
    scale_tau_sq: bool,
) -> Result<LossWithGrad> {
    if !z_teacher.same_shape(z_student) {
        return Err(SimError::Shape(format!(
            "teacher {}x{} vs student {}x{}",
            z_teacher.rows(),
            z_teacher.cols(),
            z_student.rows(),
            z_student.cols()
        )));
    }
    let batch = z_teacher.rows() as f64;
    let ls_t = log_softmax_rows(z_teacher, tau)?;
    let ls_s = log_softmax_rows(z_student, tau)?;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(z_student.rows(), z_student.cols());
    for i in 0..grad.data().len() {
        let pt = Float::exp(ls_t.data()[i]);
        if pt > 0.0 {
            value += pt * (ls_t.data()[i] - ls_s.data()[i]);
        }
        grad.data_mut()[i] = (Float::exp(ls_s.data()[i]) - pt) / (tau * batch);
    }
    value /= batch;
    let loss = LossWithGrad::new(value).with_grad(GRAD_Z_STUDENT, grad);
    Ok(if scale_tau_sq { loss.scaled(tau * tau) } else { loss })
}

/// Split the KD loss into its target and non-target parts:
/// `td + ntd == kd_loss` as an exact regrouping of the same sum.
pub fn decompose_kd(
    z_teacher: &Matrix,
    z_student: &Matrix,
    tau: f64,
    target_labels: &[usize],
) -> Result<(f64, f64)> {
    if !z_teacher.same_shape(z_student) {
        return Err(SimError::Shape("teacher/student shape mismatch".into()));
    }
    validate_labels(target_labels, z_teacher.rows(), z_teacher.cols())?;
    let batch = z_teacher.rows() as f64;
    let ls_t = log_softmax_rows(z_teacher, tau)?;
    let ls_s = log_softmax_rows(z_student, tau)?;
    let mut td = 0.0;
    let mut ntd = 0.0;
    for (b, &target) in target_labels.iter().enumerate() {
        for (u, (lt, ls)) in ls_t.row(b).iter().zip(ls_s.row(b)).enumerate() {
            let pt = Float::exp(*lt);
            if pt <= 0.0 {
                continue;
            }
            let term = pt * (lt - ls);
            if u == target {
                td += term;
            } else {
                ntd += term;
            }
        }
    }
    Ok((td / batch, ntd / batch))
}

/// Non-target distillation against a frozen teacher; see [`FntdVariant`].
pub fn fntd_loss(
    z_teacher: &Matrix,
    z_student: &Matrix,
    tau: f64,
    target_labels: &[usize],
    variant: FntdVariant,
) -> Result<LossWithGrad> {
    if !z_teacher.same_shape(z_student) {
        return Err(SimError::Shape("teacher/student shape mismatch".into()));
    }
    let classes = z_teacher.cols();
    if classes < 2 {
        return Err(SimError::Parameter(format!(
            "non-target distillation needs >= 2 classes, got {classes}"
        )));
    }
    validate_labels(target_labels, z_teacher.rows(), classes)?;
    if !(tau > 0.0) {
        return Err(SimError::Parameter(format!("tau must be positive, got {tau}")));
    }
    match variant {
        FntdVariant::Renormalized => fntd_renormalized(z_teacher, z_student, tau, target_labels),
        FntdVariant::Literal => fntd_literal(z_teacher, z_student, tau, target_labels),
    }
}

/// Log-softmax over the non-target logits of one row, max-subtracted.
/// The target slot is left untouched (and must not be read).
fn nontarget_log_softmax(row: &[f64], target: usize, tau: f64) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for (u, &v) in row.iter().enumerate() {
        if u != target {
            max = max.max(v / tau);
        }
    }
    let mut sum = 0.0;
    for (u, &v) in row.iter().enumerate() {
        if u != target {
            sum += Float::exp(v / tau - max);
        }
    }
    let lse = max + Float::ln(sum);
    let mut out = vec![0.0; row.len()];
    for (u, &v) in row.iter().enumerate() {
        if u != target {
            out[u] = v / tau - lse;
        }
    }
    out
}

fn fntd_renormalized(
    z_teacher: &Matrix,
    z_student: &Matrix,
    tau: f64,
    target_labels: &[usize],
) -> Result<LossWithGrad> {
    let batch = z_teacher.rows();
    let inv_b = 1.0 / batch as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(batch, z_teacher.cols());
    for (b, &target) in target_labels.iter().enumerate() {
        let lhat_t = nontarget_log_softmax(z_teacher.row(b), target, tau);
        let lhat_s = nontarget_log_softmax(z_student.row(b), target, tau);
        for u in 0..z_teacher.cols() {
            if u == target {
                continue; // gradient on the target logit stays exactly zero
            }
            let pt = Float::exp(lhat_t[u]);
            if pt > 0.0 {
                value += pt * (lhat_t[u] - lhat_s[u]);
            }
            grad[(b, u)] = (Float::exp(lhat_s[u]) - pt) / tau * inv_b;
        }
    }
    Ok(LossWithGrad::new(value * inv_b).with_grad(GRAD_Z_STUDENT, grad))
}

fn fntd_literal(
    z_teacher: &Matrix,
    z_student: &Matrix,
    tau: f64,
    target_labels: &[usize],
) -> Result<LossWithGrad> {
    let batch = z_teacher.rows();
    let inv_b = 1.0 / batch as f64;
    let ls_t = log_softmax_rows(z_teacher, tau)?;
    let ls_s = log_softmax_rows(z_student, tau)?;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(batch, z_teacher.cols());
    for (b, &target) in target_labels.iter().enumerate() {
        let pt_target = Float::exp(ls_t[(b, target)]);
        for u in 0..z_teacher.cols() {
            let pt = Float::exp(ls_t[(b, u)]);
            if u != target && pt > 0.0 {
                value += pt * (ls_t[(b, u)] - ls_s[(b, u)]);
            }
            // d/dz_S^u of the non-target sum under the full softmax
            let mut g = (1.0 - pt_target) * Float::exp(ls_s[(b, u)]);
            if u != target {
                g -= pt;
            }
            grad[(b, u)] = g / tau * inv_b;
        }
    }
    Ok(LossWithGrad::new(value * inv_b).with_grad(GRAD_Z_STUDENT, grad))
}

/// Local objective: cross-entropy plus (unweighted) non-target distillation
/// from the snapshot teacher.
pub fn local_loss_fcclplus(
    z_student: &Matrix,
    labels: &[usize],
    z_teacher: &Matrix,
    tau: f64,
    variant: FntdVariant,
) -> Result<LossWithGrad> {
    let ce = ce_loss(z_student, labels)?;
    let fntd = fntd_loss(z_teacher, z_student, tau, labels, variant)?;
    Ok(ce.add(fntd))
}

/// Baseline local objective: cross-entropy plus `tau^2`-scaled plain KD.
/// Exhibits the target-logit gradient conflict FNTD removes.
pub fn local_loss_plain_kd(
    z_student: &Matrix,
    labels: &[usize],
    z_teacher: &Matrix,
    tau: f64,
) -> Result<LossWithGrad> {
    let ce = ce_loss(z_student, labels)?;
    let kd = kd_loss(z_teacher, z_student, tau, true)?;
    Ok(ce.add(kd))
}

/// Conference-style local objective: cross-entropy plus plain KD against the
/// previous-epoch snapshot and, when given, against the pretrained model.
pub fn local_loss_fccl_conference(
    z_student: &Matrix,
    labels: &[usize],
    z_prev: &Matrix,
    z_pretrained: Option<&Matrix>,
    tau: f64,
) -> Result<LossWithGrad> {
    let mut loss = ce_loss(z_student, labels)?.add(kd_loss(z_prev, z_student, tau, false)?);
    if let Some(z_star) = z_pretrained {
        loss = loss.add(kd_loss(z_star, z_student, tau, false)?);
    }
    Ok(loss)
}
