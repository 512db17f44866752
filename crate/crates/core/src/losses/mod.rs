//! Forward values and analytic gradients for every training loss.
//!
//! Collaborative updating aligns clients on unlabeled public data through a
//! cross-correlation matrix over logits ([`correlation`]) and an
//! instance-similarity distribution over features ([`similarity`]). Local
//! updating distills from a snapshot teacher ([`distillation`]); FedDF/FedMD
//! style alignment losses live in [`baseline`].
//!
//! No autodiff: each loss ships a hand-derived backward, and every gradient
//! is validated against central finite differences (see [`crate::check`]).

use alloc::collections::BTreeMap;

use crate::numerics::Matrix;

mod baseline;
mod correlation;
mod distillation;
mod similarity;

pub use baseline::{feddf_loss, fedmd_loss};
pub use correlation::{cross_correlation_matrix, fccm_loss, CorrelationMatrix};
pub use distillation::{
    ce_loss, decompose_kd, fntd_loss, kd_loss, local_loss_fccl_conference, local_loss_fcclplus,
    local_loss_plain_kd, FntdVariant,
};
pub use similarity::{fisl_loss, instance_similarity, SimilarityMatrix};

/// Gradient key: client logits on public data (collaborative losses).
pub const GRAD_Z_LOCAL: &str = "z_local";
/// Gradient key: client features on public data (FISL).
pub const GRAD_H_LOCAL: &str = "h_local";
/// Gradient key: student logits on private data (local losses).
pub const GRAD_Z_STUDENT: &str = "z_student";

/// A loss value together with gradients for each differentiable input,
/// keyed by input name. Immutable once returned.
#[derive(Debug, Clone)]
pub struct LossWithGrad {
    pub value: f64,
    grads: BTreeMap<&'static str, Matrix>,
}

impl LossWithGrad {
    pub fn new(value: f64) -> Self {
        Self { value, grads: BTreeMap::new() }
    }

    pub fn with_grad(mut self, name: &'static str, grad: Matrix) -> Self {
        self.grads.insert(name, grad);
        self
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn grads(&self) -> impl Iterator<Item = (&'static str, &Matrix)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Scale the value and every gradient by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        for g in self.grads.values_mut() {
            *g = g.scaled(factor);
        }
        self
    }

    /// Add another loss term; gradients under the same name are summed.
    #[allow(clippy::should_implement_trait)] // consuming merge, not ops::Add
    pub fn add(mut self, other: Self) -> Self {
        self.value += other.value;
        for (name, grad) in other.grads {
            match self.grads.get_mut(name) {
                Some(existing) => existing.add_scaled_in_place(&grad, 1.0),
                None => {
                    self.grads.insert(name, grad);
                }
            }
        }
        self
    }
}

/// Collaborative objective: FCCM plus `omega` times FISL, both against
/// frozen server averages. With `omega == 0` the FISL branch is skipped
/// entirely so the result equals the FCCM loss bitwise.
#[allow(clippy::too_many_arguments)]
pub fn collaborative_loss(
    z_local: &Matrix,
    z_avg: &Matrix,
    h_local: &Matrix,
    s_avg: &SimilarityMatrix,
    lambda: f64,
    omega: f64,
    mu: f64,
) -> crate::Result<LossWithGrad> {
    let corr = cross_correlation_matrix(z_local, z_avg)?;
    let fccm = fccm_loss(&corr, lambda)?;
    if omega == 0.0 {
        return Ok(fccm);
    }
    let sim = instance_similarity(h_local, mu)?;
    let fisl = fisl_loss(&sim, s_avg)?;
    Ok(fccm.add(fisl.scaled(omega)))
}
