//! Cross-correlation alignment between client logits and the server average.
//!
//! Both logit blocks are standardized along the batch dimension, then every
//! column pair is correlated. Driving the diagonal to +1 makes matching class
//! dimensions agree across participants; driving off-diagonals to -1
//! decorrelates distinct classes. The averaged logits are a frozen target:
//! no gradient flows into them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Result, SimError};
use crate::numerics::{batch_standardize, Matrix, EPS};

use super::{LossWithGrad, GRAD_Z_LOCAL};

/// Correlation matrix `C x C` plus the intermediates needed to backpropagate
/// through its construction into the local logits.
///
/// Matrices built by [`cross_correlation_matrix`] carry that context;
/// matrices built from raw values ([`CorrelationMatrix::from_values`]) yield
/// value-only losses.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    m: Matrix,
    ctx: Option<BackwardCtx>,
}

#[derive(Debug, Clone)]
struct BackwardCtx {
    /// Centered local logits columns (before norm division).
    centered: Matrix,
    /// Norm of each centered local column.
    centered_norms: Vec<f64>,
    /// Standardized local logits.
    local: Matrix,
    /// Column norms of `local` (close to 1 away from degenerate columns).
    local_norms: Vec<f64>,
    /// Standardized average logits (constant target).
    avg: Matrix,
    avg_norms: Vec<f64>,
}

impl CorrelationMatrix {
    /// Wrap raw correlation values (no gradient context).
    pub fn from_values(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(SimError::Shape(format!(
                "correlation matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(Self { m, ctx: None })
    }

    /// The `C x C` correlation values.
    pub fn values(&self) -> &Matrix {
        &self.m
    }

    pub fn class_count(&self) -> usize {
        self.m.rows()
    }
}

fn column_norms(m: &Matrix) -> Vec<f64> {
    let mut norms = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (c, n) in norms.iter_mut().enumerate() {
            *n += m[(r, c)] * m[(r, c)];
        }
    }
    for n in &mut norms {
        *n = Float::sqrt(*n);
    }
    norms
}

/// Batch-standardized column means plus norms, kept for the backward pass.
fn centered_and_norms(z: &Matrix) -> (Matrix, Vec<f64>) {
    let rows = z.rows() as f64;
    let mut centered = z.clone();
    let mut norms = vec![0.0; z.cols()];
    for c in 0..z.cols() {
        let mean = (0..z.rows()).map(|r| z[(r, c)]).sum::<f64>() / rows;
        let mut ss = 0.0;
        for r in 0..z.rows() {
            let v = z[(r, c)] - mean;
            centered[(r, c)] = v;
            ss += v * v;
        }
        norms[c] = Float::sqrt(ss);
    }
    (centered, norms)
}

/// Correlate each standardized column of `z_local` with each standardized
/// column of the frozen `z_avg`.
pub fn cross_correlation_matrix(z_local: &Matrix, z_avg: &Matrix) -> Result<CorrelationMatrix> {
    if !z_local.same_shape(z_avg) {
        return Err(SimError::Shape(format!(
            "logit blocks {}x{} vs {}x{}",
            z_local.rows(),
            z_local.cols(),
            z_avg.rows(),
            z_avg.cols()
        )));
    }
    if z_local.rows() < 2 {
        return Err(SimError::Parameter(format!(
            "cross-correlation needs a batch of >= 2, got {}",
            z_local.rows()
        )));
    }
    let (centered, centered_norms) = centered_and_norms(z_local);
    let local = batch_standardize(z_local)?;
    let avg = batch_standardize(z_avg)?;
    let local_norms = column_norms(&local);
    let avg_norms = column_norms(&avg);

    let classes = z_local.cols();
    let batch = z_local.rows();
    let mut m = Matrix::zeros(classes, classes);
    for u in 0..classes {
        for v in 0..classes {
            let mut dot = 0.0;
            for b in 0..batch {
                dot += local[(b, u)] * avg[(b, v)];
            }
            m[(u, v)] = dot / (local_norms[u] * avg_norms[v] + EPS);
        }
    }
    Ok(CorrelationMatrix {
        m,
        ctx: Some(BackwardCtx { centered, centered_norms, local, local_norms, avg, avg_norms }),
    })
}

/// FCCM loss: squared distance of the correlation matrix from its target
/// (+1 diagonal, -1 off-diagonal), with `lambda` weighting the off-diagonal
/// term. Returns the gradient with respect to the local logits.
pub fn fccm_loss(corr: &CorrelationMatrix, lambda: f64) -> Result<LossWithGrad> {
    if !(lambda > 0.0) {
        return Err(SimError::Parameter(format!(
            "fccm lambda must be positive, got {lambda}"
        )));
    }
    let m = &corr.m;
    let classes = m.rows();
    let mut value = 0.0;
    // dL/dM
    let mut grad_m = Matrix::zeros(classes, classes);
    for u in 0..classes {
        for v in 0..classes {
            if u == v {
                let d = 1.0 - m[(u, u)];
                value += d * d;
                grad_m[(u, u)] = -2.0 * d;
            } else {
                let d = 1.0 + m[(u, v)];
                value += lambda * d * d;
                grad_m[(u, v)] = 2.0 * lambda * d;
            }
        }
    }

    let ctx = match &corr.ctx {
        Some(ctx) => ctx,
        // Raw-values matrix: nothing to differentiate through.
        None => return Ok(LossWithGrad::new(value)),
    };
    let batch = ctx.local.rows();
    let mut grad_z = Matrix::zeros(batch, classes);
    for u in 0..classes {
        let na = ctx.local_norms[u];
        // dL/d(local standardized column u): column u of the local block
        // appears in row u of M only.
        let mut g_a = vec![0.0; batch];
        let mut shrink = 0.0; // coefficient of the norm-direction correction
        for v in 0..classes {
            let gm = grad_m[(u, v)];
            if gm == 0.0 {
                continue;
            }
            let denom = na * ctx.avg_norms[v] + EPS;
            for (b, g) in g_a.iter_mut().enumerate() {
                *g += gm * ctx.avg[(b, v)] / denom;
            }
            if na > 0.0 {
                shrink += gm * corr.m[(u, v)] * ctx.avg_norms[v] / (na * denom);
            }
        }
        if shrink != 0.0 {
            for (b, g) in g_a.iter_mut().enumerate() {
                *g -= shrink * ctx.local[(b, u)];
            }
        }
        // Through standardization: a = c / (||c|| + eps), c = z - mean(z).
        let r = ctx.centered_norms[u];
        let denom = r + EPS;
        let mean_g = g_a.iter().sum::<f64>() / batch as f64;
        let dot_gc: f64 = (0..batch).map(|b| g_a[b] * ctx.centered[(b, u)]).sum();
        for b in 0..batch {
            let mut v = (g_a[b] - mean_g) / denom;
            if r > 0.0 {
                v -= dot_gc * ctx.centered[(b, u)] / (r * denom * denom);
            }
            grad_z[(b, u)] = v;
        }
    }

    Ok(LossWithGrad::new(value).with_grad(GRAD_Z_LOCAL, grad_z))
}
