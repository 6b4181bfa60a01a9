//! Aggregation of origin-destination trip logs into hourly count slices.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CountTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub start_node: String,
    pub end_node: String,
    /// UTC seconds.
    pub start_time: f64,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub min_duration: f64,
    pub max_duration: f64,
    pub bin_width: i64,
    /// Window start, UTC seconds (inclusive).
    pub window_start: i64,
    /// Window end, UTC seconds (exclusive).
    pub window_end: i64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_duration: 60.0,
            max_duration: 10_800.0,
            bin_width: 3600,
            window_start: 0,
            window_end: 86_400,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_duration > 0.0 && self.min_duration < self.max_duration) {
            return Err(Error::InvalidInput(format!(
                "need 0 < min_duration < max_duration, got {} and {}",
                self.min_duration, self.max_duration
            )));
        }
        let len = self.window_end - self.window_start;
        if len <= 0 {
            return Err(Error::InvalidInput("ingest window is empty".into()));
        }
        if self.bin_width <= 0 || len % self.bin_width != 0 {
            return Err(Error::InvalidInput(format!(
                "bin_width {} must be positive and divide the window length {len}",
                self.bin_width
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.window_end - self.window_start) / self.bin_width) as usize
    }
}

/// Accepts epoch seconds, RFC 3339, or `YYYY-MM-DD HH:MM:SS[.fff]` read as UTC.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
    }
    ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|dt| {
            let utc = dt.and_utc();
            utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9
        })
}

#[derive(Debug, Clone)]
pub struct IngestResult {
    pub tensor: CountTensor,
    /// Node ids in sorted order; position is the tensor index.
    pub node_index: Vec<String>,
    pub kept: usize,
    pub filtered: usize,
    pub malformed: usize,
}

impl IngestResult {
    pub fn index_map(&self) -> BTreeMap<&str, usize> {
        self.node_index.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

fn keep(r: &TripRecord, cfg: &IngestConfig) -> bool {
    r.duration >= cfg.min_duration
        && r.duration <= cfg.max_duration
        && r.start_time >= cfg.window_start as f64
        && r.start_time < cfg.window_end as f64
}

/// Counts each trip once, at its start time. Round trips add 1 to the
/// diagonal; other trips add 1 to both `(i, j)` and `(j, i)`.
pub fn ingest_trips(records: impl IntoIterator<Item = TripRecord>, cfg: &IngestConfig) -> Result<IngestResult> {
    ingest_with_malformed(records, cfg, 0)
}

fn ingest_with_malformed(
    records: impl IntoIterator<Item = TripRecord>,
    cfg: &IngestConfig,
    malformed: usize,
) -> Result<IngestResult> {
    cfg.validate()?;
    let mut survivors = Vec::new();
    let mut filtered = 0;
    let mut malformed = malformed;
    for r in records {
        if !(r.duration > 0.0) || !r.start_time.is_finite() {
            malformed += 1;
        } else if keep(&r, cfg) {
            survivors.push(r);
        } else {
            filtered += 1;
        }
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed trip records");
    }
    if survivors.is_empty() {
        return Err(Error::InvalidInput("no trip records survive the filters".into()));
    }
    let nodes: BTreeSet<&str> = survivors
        .iter()
        .flat_map(|r| [r.start_node.as_str(), r.end_node.as_str()])
        .collect();
    let node_index: Vec<String> = nodes.iter().map(|s| s.to_string()).collect();
    let lookup: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let n = node_index.len();
    let mut slices = vec![DMatrix::zeros(n, n); cfg.n_bins()];
    for r in &survivors {
        let t = ((r.start_time - cfg.window_start as f64) / cfg.bin_width as f64).floor() as usize;
        let (i, j) = (lookup[r.start_node.as_str()], lookup[r.end_node.as_str()]);
        slices[t][(i, j)] += 1.0;
        if i != j {
            slices[t][(j, i)] += 1.0;
        }
    }
    let tensor = CountTensor::new(slices)?;
    Ok(IngestResult {
        tensor,
        node_index,
        kept: survivors.len(),
        filtered,
        malformed,
    })
}

/// Reads a CSV with header `start_id,end_id,start_time,duration_s` (extra
/// columns ignored) and aggregates it. Unparseable rows are skipped and
/// counted.
pub fn ingest_csv<R: Read>(reader: R, cfg: &IngestConfig) -> Result<IngestResult> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = r
        .headers()
        .map_err(|e| Error::InvalidInput(format!("trip CSV header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("trip CSV is missing column {name:?}")))
    };
    let (c_start, c_end, c_time, c_dur) = (col("start_id")?, col("end_id")?, col("start_time")?, col("duration_s")?);
    let mut records = Vec::new();
    let mut malformed = 0;
    for rec in r.records() {
        let parsed = rec.ok().and_then(|rec| {
            let start_node = rec.get(c_start)?.to_string();
            let end_node = rec.get(c_end)?.to_string();
            if start_node.is_empty() || end_node.is_empty() {
                return None;
            }
            let start_time = parse_timestamp(rec.get(c_time)?)?;
            let duration = rec.get(c_dur)?.parse::<f64>().ok()?;
            Some(TripRecord {
                start_node,
                end_node,
                start_time,
                duration,
            })
        });
        match parsed {
            Some(t) => records.push(t),
            None => malformed += 1,
        }
    }
    ingest_with_malformed(records, cfg, malformed)
}
