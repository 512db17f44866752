//! Metrics CSV: one header row, one row per record, stable column order.
//!
//! Columns: `epoch,phase,intra_avg,inter_avg,intra_last3,inter_last3`, then
//! `intra_c{i}`, `inter_c{i}`, and `loss_c{i}` per client. Accuracies are
//! written with 4 decimals, losses with 6. The `*_last3` columns carry the
//! running mean over the last three epochs of the same phase up to and
//! including the row, matching the convention of reporting the mean accuracy
//! of the final three communication epochs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hetfed_core::metrics::{MetricsLog, Phase};

use super::write_atomic;

fn phase_key(phase: Phase) -> &'static str {
    phase.name()
}

/// Render the log; byte-deterministic for identical input.
pub fn metrics_csv_string(log: &MetricsLog) -> String {
    let clients = log.records.first().map_or(0, |r| r.intra.len());
    let mut out = String::new();
    out.push_str("epoch,phase,intra_avg,inter_avg,intra_last3,inter_last3");
    for i in 0..clients {
        let _ = write!(out, ",intra_c{i}");
    }
    for i in 0..clients {
        let _ = write!(out, ",inter_c{i}");
    }
    for i in 0..clients {
        let _ = write!(out, ",loss_c{i}");
    }
    out.push('\n');

    let mut trailing: HashMap<&'static str, Vec<(f64, f64)>> = HashMap::new();
    for rec in &log.records {
        let window = trailing.entry(phase_key(rec.phase)).or_default();
        window.push((rec.intra_avg(), rec.inter_avg()));
        let tail = &window[window.len().saturating_sub(3)..];
        let intra3 = tail.iter().map(|t| t.0).sum::<f64>() / tail.len() as f64;
        let inter3 = tail.iter().map(|t| t.1).sum::<f64>() / tail.len() as f64;

        let _ = write!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            rec.epoch,
            rec.phase.name(),
            rec.intra_avg(),
            rec.inter_avg(),
            intra3,
            inter3
        );
        for v in &rec.intra {
            let _ = write!(out, ",{v:.4}");
        }
        for v in &rec.inter {
            let _ = write!(out, ",{v:.4}");
        }
        for v in &rec.phase_loss {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Write the metrics CSV to `path`.
pub fn write_metrics_csv(log: &MetricsLog, path: &Path) -> io::Result<()> {
    write_atomic(path, &metrics_csv_string(log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetfed_core::metrics::MetricsRecord;

    fn sample_log() -> MetricsLog {
        let rec = |epoch, phase, intra: f64, inter: f64| MetricsRecord {
            epoch,
            phase,
            intra: vec![intra, intra + 0.1],
            inter: vec![inter, inter - 0.05],
            phase_loss: vec![0.5, 0.25],
        };
        MetricsLog {
            records: vec![
                rec(0, Phase::Pretrain, 0.8, 0.3),
                rec(1, Phase::PostCollab, 0.8, 0.4),
                rec(1, Phase::PostLocal, 0.85, 0.35),
                rec(2, Phase::PostCollab, 0.82, 0.45),
                rec(2, Phase::PostLocal, 0.86, 0.42),
                rec(3, Phase::PostCollab, 0.83, 0.5),
                rec(3, Phase::PostLocal, 0.87, 0.44),
                rec(4, Phase::PostCollab, 0.84, 0.55),
                rec(4, Phase::PostLocal, 0.88, 0.5),
            ],
            correlations: Vec::new(),
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let csv = metrics_csv_string(&MetricsLog::default());
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("epoch,phase,"));
    }

    #[test]
    fn round_trip_parse() {
        let log = sample_log();
        let csv = metrics_csv_string(&log);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header[0], "epoch");
        assert_eq!(header.len(), 6 + 3 * 2);
        for (line, rec) in lines.zip(&log.records) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[0].parse::<usize>().unwrap(), rec.epoch);
            assert_eq!(cells[1], rec.phase.name());
            let intra: f64 = cells[2].parse().unwrap();
            assert!((intra - rec.intra_avg()).abs() < 5e-5);
            let loss: f64 = cells[10].parse().unwrap();
            assert!((loss - rec.phase_loss[0]).abs() < 5e-7);
        }
    }

    #[test]
    fn trailing_window_matches_hand_average() {
        let log = sample_log();
        let csv = metrics_csv_string(&log);
        // last row is epoch 4 post_local; its inter_last3 must be the hand
        // mean of epochs 2..4 post_local inter averages
        let last = csv.lines().last().unwrap();
        let cells: Vec<&str> = last.split(',').collect();
        let inter3: f64 = cells[5].parse().unwrap();
        let e2 = (0.42 + 0.37) / 2.0;
        let e3 = (0.44 + 0.39) / 2.0;
        let e4 = (0.5 + 0.45) / 2.0;
        let hand = (e2 + e3 + e4) / 3.0;
        assert!((inter3 - hand).abs() < 5e-5, "{inter3} vs {hand}");
    }

    #[test]
    fn output_is_byte_deterministic() {
        let log = sample_log();
        assert_eq!(metrics_csv_string(&log), metrics_csv_string(&log));
    }
}
