//! Instance-similarity alignment over unlabeled public batches.
//!
//! Feature dimensions differ across heterogeneous clients, so features are
//! compared indirectly: each client computes the cosine similarity of every
//! batch instance with every other instance (self-similarity removed by
//! index), softened by `mu`, and aligns the row-wise softmax of that matrix
//! with the cross-client average.

use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Result, SimError};
use crate::numerics::{log_softmax_rows, Matrix, EPS};

use super::{LossWithGrad, GRAD_H_LOCAL};

/// `B x (B-1)` matrix of soft cosine similarities among batch instances.
///
/// Matrices produced by [`instance_similarity`] keep the generating features
/// for backpropagation; server-side averages are built with
/// [`SimilarityMatrix::from_average`] and act as constants.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    s: Matrix,
    mu: f64,
    ctx: Option<FeatureCtx>,
}

#[derive(Debug, Clone)]
struct FeatureCtx {
    h: Matrix,
    norms: Vec<f64>,
    dots: Matrix,
}

impl SimilarityMatrix {
    /// Wrap raw similarity values (e.g. a server average); carries no
    /// gradient context.
    pub fn from_average(s: Matrix, mu: f64) -> Result<Self> {
        if s.rows() < 2 || s.cols() != s.rows() - 1 {
            return Err(SimError::Shape(format!(
                "similarity matrix must be B x (B-1), got {}x{}",
                s.rows(),
                s.cols()
            )));
        }
        if !(mu > 0.0) {
            return Err(SimError::Parameter(format!("mu must be positive, got {mu}")));
        }
        Ok(Self { s, mu, ctx: None })
    }

    pub fn values(&self) -> &Matrix {
        &self.s
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn batch(&self) -> usize {
        self.s.rows()
    }

    /// Arithmetic mean of several similarity matrices (same shape and mu).
    pub fn average(parts: &[&SimilarityMatrix]) -> Result<SimilarityMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| SimError::Parameter("average of zero similarity matrices".into()))?;
        let mut sum = first.s.clone();
        for other in &parts[1..] {
            if !other.s.same_shape(&first.s) || other.mu != first.mu {
                return Err(SimError::Shape("similarity matrices disagree in shape or mu".into()));
            }
            sum.add_scaled_in_place(&other.s, 1.0);
        }
        Ok(SimilarityMatrix {
            s: sum.scaled(1.0 / parts.len() as f64),
            mu: first.mu,
            ctx: None,
        })
    }
}

/// Cosine-similarity distribution of the feature rows, divided by `mu`, with
/// the diagonal removed by index (row `b` keeps its `B-1` cross-similarities
/// in original column order).
pub fn instance_similarity(h: &Matrix, mu: f64) -> Result<SimilarityMatrix> {
    let batch = h.rows();
    if batch < 2 {
        return Err(SimError::Parameter(format!(
            "instance similarity needs a batch of >= 2, got {batch}"
        )));
    }
    if !(mu > 0.0) {
        return Err(SimError::Parameter(format!("mu must be positive, got {mu}")));
    }
    let norms: Vec<f64> = (0..batch)
        .map(|b| Float::sqrt(h.row(b).iter().map(|v| v * v).sum::<f64>()))
        .collect();
    let mut dots = Matrix::zeros(batch, batch);
    for b in 0..batch {
        for k in b..batch {
            let dot: f64 = h.row(b).iter().zip(h.row(k)).map(|(x, y)| x * y).sum();
            dots[(b, k)] = dot;
            dots[(k, b)] = dot;
        }
    }
    let mut s = Matrix::zeros(batch, batch - 1);
    for b in 0..batch {
        for k in 0..batch {
            if k == b {
                continue;
            }
            let col = if k < b { k } else { k - 1 };
            s[(b, col)] = dots[(b, k)] / ((norms[b] * norms[k] + EPS) * mu);
        }
    }
    Ok(SimilarityMatrix {
        s,
        mu,
        ctx: Some(FeatureCtx { h: h.clone(), norms, dots }),
    })
}

/// FISL loss: mean over anchor instances of
/// `KL(softmax(avg row) || softmax(local row))`. The average is a frozen
/// target; the gradient flows into the local features when the local matrix
/// carries them.
pub fn fisl_loss(s_local: &SimilarityMatrix, s_avg: &SimilarityMatrix) -> Result<LossWithGrad> {
    if !s_local.s.same_shape(&s_avg.s) {
        return Err(SimError::Shape(format!(
            "similarity shapes {}x{} vs {}x{}",
            s_local.s.rows(),
            s_local.s.cols(),
            s_avg.s.rows(),
            s_avg.s.cols()
        )));
    }
    if s_local.mu != s_avg.mu {
        return Err(SimError::Parameter(format!(
            "similarity mu mismatch: {} vs {}",
            s_local.mu, s_avg.mu
        )));
    }
    let batch = s_local.s.rows();
    // Log-space KL: soft similarities reach +-1/mu, so row softmaxes
    // saturate; log-softmax keeps value and gradient consistent without
    // clamping.
    let ls_avg = log_softmax_rows(&s_avg.s, 1.0)?;
    let ls_local = log_softmax_rows(&s_local.s, 1.0)?;
    let mut value = 0.0;
    for i in 0..ls_avg.data().len() {
        let p = Float::exp(ls_avg.data()[i]);
        if p > 0.0 {
            value += p * (ls_avg.data()[i] - ls_local.data()[i]);
        }
    }
    value /= batch as f64;

    let ctx = match &s_local.ctx {
        Some(ctx) => ctx,
        None => return Ok(LossWithGrad::new(value)),
    };

    // d value / d s_local = (q - p) / B per entry.
    let dims = ctx.h.cols();
    let mut grad_h = Matrix::zeros(batch, dims);
    let inv_b = 1.0 / batch as f64;
    for b in 0..batch {
        for k in 0..batch {
            if k == b {
                continue;
            }
            let col = if k < b { k } else { k - 1 };
            let q = Float::exp(ls_local[(b, col)]);
            let p = Float::exp(ls_avg[(b, col)]);
            let w = (q - p) * inv_b / s_local.mu;
            let nb = ctx.norms[b];
            let nk = ctx.norms[k];
            let denom = nb * nk + EPS;
            let dot = ctx.dots[(b, k)];
            // s_bk = dot / (mu * (nb*nk + eps)); differentiate in both rows.
            let shrink_b = if nb > 0.0 { dot * nk / (nb * denom * denom) } else { 0.0 };
            let shrink_k = if nk > 0.0 { dot * nb / (nk * denom * denom) } else { 0.0 };
            for d in 0..dims {
                grad_h[(b, d)] += w * (ctx.h[(k, d)] / denom - shrink_b * ctx.h[(b, d)]);
                grad_h[(k, d)] += w * (ctx.h[(b, d)] / denom - shrink_k * ctx.h[(k, d)]);
            }
        }
    }
    Ok(LossWithGrad::new(value).with_grad(GRAD_H_LOCAL, grad_h))
}
