//! Concentration accuracy against a reference map.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::tissue::ConcentrationMap;

/// Fixed reduction block; sums are combined in block order so results do not depend on threading.
const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseReport {
    /// Mean squared error pooled over HbO and Hb, (g/litre)².
    pub mse: f64,
    pub rmse: f64,
    pub mse_hbo: f64,
    pub mse_hb: f64,
    pub pixels: usize,
}

pub fn concentration_mse(
    est: &ConcentrationMap,
    reference: &ConcentrationMap,
    mask: Option<&[bool]>,
    exec: Exec,
) -> Result<MseReport> {
    if est.height() != reference.height() || est.width() != reference.width() {
        return Err(Error::Argument(format!(
            "maps differ in size: {}x{} vs {}x{}",
            est.height(),
            est.width(),
            reference.height(),
            reference.width()
        )));
    }
    let n = est.len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Argument(format!(
                "mask has {} entries, maps have {n}",
                m.len()
            )));
        }
    }
    let selected = |i: usize| mask.is_none_or(|m| m[i]);
    let blocks = exec.map_range(n.div_ceil(BLOCK), |b| {
        let (mut so, mut sb, mut count) = (0.0, 0.0, 0usize);
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            if selected(i) {
                so += (est.hbo[i] - reference.hbo[i]).powi(2);
                sb += (est.hb[i] - reference.hb[i]).powi(2);
                count += 1;
            }
        }
        (so, sb, count)
    });
    let (so, sb, count) = blocks
        .into_iter()
        .fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    if count == 0 {
        return Err(Error::Argument("mask selects no pixels".into()));
    }
    let c = count as f64;
    let mse = (so + sb) / (2.0 * c);
    Ok(MseReport {
        mse,
        rmse: mse.sqrt(),
        mse_hbo: so / c,
        mse_hb: sb / c,
        pixels: count,
    })
}

/// One row of a comparison or benchmark report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub method: String,
    pub n_levels: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mse_hbo: f64,
    pub mse_hb: f64,
    pub frames_per_sec: f64,
}

impl MetricsRecord {
    pub fn new(
        method: impl Into<String>,
        n_levels: usize,
        report: &MseReport,
        frames_per_sec: f64,
    ) -> Self {
        Self {
            method: method.into(),
            n_levels,
            mse: report.mse,
            rmse: report.rmse,
            mse_hbo: report.mse_hbo,
            mse_hb: report.mse_hb,
            frames_per_sec,
        }
    }
}

pub fn write_records_csv<W: Write>(writer: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_jsonl<W: Write>(mut writer: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Table(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
