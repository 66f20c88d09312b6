//! CSV and JSON artifacts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::IterateRecord;

/// Header of every trace CSV.
pub const TRACE_HEADER: [&str; 9] = [
    "k",
    "t",
    "err_to_truth",
    "err_rel",
    "residual",
    "step_diff",
    "descriptor_size",
    "consistent",
    "dual_objective",
];

/// Header of the SNR sweep CSV.
pub const SWEEP_HEADER: [&str; 5] = ["snr_db", "delta", "k_best", "descriptor_size", "consistent"];

/// One line of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    pub err_to_truth: f64,
    pub err_rel: f64,
    pub residual: f64,
    /// Absent at `k = 0`; written as `NaN`.
    #[serde(deserialize_with = "nan_as_none")]
    pub step_diff: Option<f64>,
    pub descriptor_size: usize,
    #[serde(deserialize_with = "flag")]
    pub consistent: bool,
    pub dual_objective: f64,
}

impl TraceRow {
    pub fn new(rec: &IterateRecord, truth_norm: f64, descriptor_size: usize, consistent: bool) -> Self {
        Self {
            k: rec.k,
            t: rec.t,
            err_to_truth: rec.err_to_truth,
            err_rel: rec.err_to_truth / truth_norm,
            residual: rec.residual,
            step_diff: rec.step_diff,
            descriptor_size,
            consistent,
            dual_objective: rec.dual_objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub delta: f64,
    pub k_best: usize,
    pub descriptor_size: usize,
    #[serde(deserialize_with = "flag")]
    pub consistent: bool,
}

fn nan_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    let v = f64::deserialize(d)?;
    Ok((!v.is_nan()).then_some(v))
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
    }
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            num(r.t),
            num(r.err_to_truth),
            num(r.err_rel),
            num(r.residual),
            num(r.step_diff.unwrap_or(f64::NAN)),
            r.descriptor_size.to_string(),
            bit(r.consistent).into(),
            num(r.dual_objective),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Parses a trace CSV; columns are matched by header name.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    for col in TRACE_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::input(format!("trace CSV is missing column {col}")));
        }
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            num(r.snr_db),
            num(r.delta),
            r.k_best.to_string(),
            r.descriptor_size.to_string(),
            bit(r.consistent).into(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_trace_file(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_trace_csv(create(path)?, rows)
}

pub fn write_sweep_file(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_sweep_csv(create(path)?, rows)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace_csv(File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}
