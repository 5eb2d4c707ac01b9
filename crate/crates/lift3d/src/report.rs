//! CSV outputs: per-step loss history and per-pair reprojection errors.

use crate::error::{Error, Result};
use lift3d_core::eval::MetricReport;
use lift3d_core::optim::LossRecord;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub l_rgb: f64,
    pub l_iou: f64,
    pub l_perc: f64,
    pub total: f64,
}

impl From<&LossRecord> for LossRow {
    fn from(r: &LossRecord) -> Self {
        LossRow { step: r.step, l_rgb: r.terms.l_rgb, l_iou: r.terms.l_iou, l_perc: r.terms.l_perc, total: r.terms.total }
    }
}

/// One reprojection pair; `re` is empty when no pixel survived the warp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub pair_id: usize,
    pub azimuth_a: f64,
    pub azimuth_b: f64,
    pub re: Option<f64>,
    pub valid_fraction: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_losses(path: &Path, history: &[LossRecord]) -> Result<()> {
    write_rows(path, history.iter().map(LossRow::from))
}

pub fn read_losses(path: &Path) -> Result<Vec<LossRow>> {
    read_rows(path)
}

pub fn pair_rows(report: &MetricReport) -> Vec<PairRow> {
    report
        .pairs
        .iter()
        .map(|p| PairRow { pair_id: p.pair_id, azimuth_a: p.azimuth_a, azimuth_b: p.azimuth_b, re: p.re, valid_fraction: p.valid_fraction })
        .collect()
}

pub fn write_pairs(path: &Path, report: &MetricReport) -> Result<()> {
    write_rows(path, pair_rows(report))
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRow>> {
    read_rows(path)
}

/// JSON-friendly digest of a report: NaN means becomes `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_re: Option<f64>,
    pub pairs: usize,
    pub defined_pairs: usize,
    pub valid_fraction: f64,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        MetricSummary {
            mean_re: r.mean.is_finite().then_some(r.mean),
            pairs: r.count,
            defined_pairs: r.pairs.iter().filter(|p| p.re.is_some()).count(),
            valid_fraction: r.valid_fraction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lift3d_core::eval::PairResult;
    use lift3d_core::optim::{LossTerms, LossWeights};

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let w = LossWeights::default();
        let h: Vec<LossRecord> = (0..3).map(|s| LossRecord { step: s, terms: LossTerms::new(0.1 * s as f64, 0.3, 1.0 / 3.0, &w) }).collect();
        write_losses(&path, &h).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,l_rgb,l_iou,l_perc,total\n"));
        let rows = read_losses(&path).unwrap();
        assert_eq!(rows, h.iter().map(LossRow::from).collect::<Vec<_>>());
    }

    #[test]
    fn pair_csv_keeps_undefined_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("re.csv");
        let pairs = vec![
            PairResult { pair_id: 0, azimuth_a: 10.0, azimuth_b: 15.0, elevation: 3.0, re: Some(0.25), valid_fraction: 0.5 },
            PairResult { pair_id: 1, azimuth_a: 20.0, azimuth_b: 25.0, elevation: 3.0, re: None, valid_fraction: 0.0 },
        ];
        let report = MetricReport { pairs, mean: 0.25, count: 2, valid_fraction: 0.25 };
        write_pairs(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("pair_id,azimuth_a,azimuth_b,re,valid_fraction\n"));
        assert_eq!(read_pairs(&path).unwrap(), pair_rows(&report));
        let s = MetricSummary::from(&report);
        assert_eq!((s.defined_pairs, s.mean_re), (1, Some(0.25)));
    }
}
