//! Intra/inter-domain accuracy and the per-phase metrics log.
//!
//! A client's intra accuracy is top-1 on its own test split; its inter
//! accuracy is the equal-weighted mean of per-domain accuracies over the
//! other `K - 1` domains. The log records both after every collaborative and
//! every local phase so the within-epoch forgetting gap is observable.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Result, SimError};
use crate::models::ClientModel;
use crate::numerics::{argmax_row, Matrix};

/// Fraction of argmax-correct predictions; ties break to the lowest class.
pub fn accuracy(model: &ClientModel, x: &Matrix, y: &[usize]) -> Result<f64> {
    if x.rows() == 0 {
        return Err(SimError::Parameter(String::from("empty test set")));
    }
    if x.rows() != y.len() {
        return Err(SimError::Shape(format!(
            "{} samples vs {} labels",
            x.rows(),
            y.len()
        )));
    }
    let z = model.logits(x)?;
    let hits = y
        .iter()
        .enumerate()
        .filter(|(r, &label)| argmax_row(z.row(*r)) == label)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Accuracy on the client's own domain test split.
pub fn intra_accuracy(model: &ClientModel, test_x: &Matrix, test_y: &[usize]) -> Result<f64> {
    accuracy(model, test_x, test_y)
}

/// Equal-weighted mean accuracy over the other `K - 1` domains.
pub fn inter_accuracy(
    model: &ClientModel,
    all_domain_tests: &[(&Matrix, &[usize])],
    own_domain: usize,
) -> Result<f64> {
    if all_domain_tests.len() < 2 {
        return Err(SimError::Parameter(format!(
            "inter accuracy needs >= 2 domains, got {}",
            all_domain_tests.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    for (j, (x, y)) in all_domain_tests.iter().enumerate() {
        if j == own_domain {
            continue;
        }
        sum += accuracy(model, x, y)?;
        count += 1.0;
    }
    Ok(sum / count)
}

/// Which point of the training cycle a record was taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// After isolated pretraining, before any communication.
    Pretrain,
    PostCollab,
    PostLocal,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::PostCollab => "post_collab",
            Phase::PostLocal => "post_local",
        }
    }
}

/// One evaluation snapshot: per-client accuracies plus the mean loss each
/// client saw during the phase that preceded it.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
    pub phase_loss: Vec<f64>,
}

impl MetricsRecord {
    pub fn intra_avg(&self) -> f64 {
        mean(&self.intra)
    }

    pub fn inter_avg(&self) -> f64 {
        mean(&self.inter)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Correlation-matrix values captured after a collaborative phase.
#[derive(Debug, Clone)]
pub struct CorrelationDump {
    pub epoch: usize,
    pub client: usize,
    pub values: Matrix,
}

/// Full experiment trace.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
    pub correlations: Vec<CorrelationDump>,
}

impl MetricsLog {
    /// Mean of the per-record average over the last `window` epochs carrying
    /// the given phase (fewer if the log is shorter).
    pub fn trailing_mean(&self, phase: Phase, window: usize) -> Option<(f64, f64)> {
        let picked: Vec<&MetricsRecord> =
            self.records.iter().filter(|r| r.phase == phase).collect();
        if picked.is_empty() {
            return None;
        }
        let tail = &picked[picked.len().saturating_sub(window)..];
        let intra = tail.iter().map(|r| r.intra_avg()).sum::<f64>() / tail.len() as f64;
        let inter = tail.iter().map(|r| r.inter_avg()).sum::<f64>() / tail.len() as f64;
        Some((intra, inter))
    }

    /// Within-epoch forgetting gap: inter accuracy after the collaborative
    /// phase minus inter accuracy after the local phase, per epoch.
    pub fn forgetting_gaps(&self) -> Vec<(usize, f64)> {
        let mut gaps = Vec::new();
        for rec in &self.records {
            if rec.phase != Phase::PostCollab {
                continue;
            }
            if let Some(local) = self
                .records
                .iter()
                .find(|r| r.epoch == rec.epoch && r.phase == Phase::PostLocal)
            {
                gaps.push((rec.epoch, rec.inter_avg() - local.inter_avg()));
            }
        }
        gaps
    }
}
