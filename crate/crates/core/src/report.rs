//! Per-query CSV rows, summaries and nearest-rank percentiles.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{ExecMode, QueryMetrics};
use crate::error::{Error, Result};
use crate::grouping::QueryId;

/// One line of the per-query CSV. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub query_id: QueryId,
    pub group_id: Option<u32>,
    pub mode: ExecMode,
    pub clusters_requested: u32,
    pub cache_hits: u32,
    pub demand_misses: u32,
    pub bytes_read: u64,
    pub load_cost_us: f64,
    pub compute_cost_us: f64,
    pub total_latency_us: f64,
    pub prefetch_triggered: bool,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "query_id",
    "group_id",
    "mode",
    "clusters_requested",
    "cache_hits",
    "demand_misses",
    "bytes_read",
    "load_cost_us",
    "compute_cost_us",
    "total_latency_us",
    "prefetch_triggered",
];

impl MetricsRow {
    pub fn from_metrics(m: &QueryMetrics, mode: ExecMode) -> Self {
        Self {
            query_id: m.query_id,
            group_id: m.group_id,
            mode,
            clusters_requested: m.clusters_requested,
            cache_hits: m.cache_hits,
            demand_misses: m.demand_misses,
            bytes_read: m.bytes_read,
            load_cost_us: m.load_cost_us,
            compute_cost_us: m.compute_cost_us,
            total_latency_us: m.total_latency_us,
            prefetch_triggered: m.prefetch_triggered,
        }
    }
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_csv_file(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, file)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "unexpected CSV header {headers:?}"
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queries: usize,
    pub warmup_boundary: usize,
    pub hit_ratio: f64,
    pub mean_latency_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub total_bytes_read: u64,
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p * n / 100)` of
/// the ascending sample. `p` is in (0, 100].
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    assert!(!sorted.is_empty() && p > 0 && p <= 100);
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Summarizes the rows from index `warmup_boundary` on. Hit ratio counts
/// demand lookups only.
pub fn summarize(rows: &[MetricsRow], warmup_boundary: usize) -> Result<Summary> {
    let measured = rows.get(warmup_boundary..).unwrap_or(&[]);
    if measured.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no queries after the warmup boundary {warmup_boundary} (of {})",
            rows.len()
        )));
    }
    let requested: u64 = measured.iter().map(|r| r.clusters_requested as u64).sum();
    let hits: u64 = measured.iter().map(|r| r.cache_hits as u64).sum();
    let mut latencies: Vec<f64> = measured.iter().map(|r| r.total_latency_us).collect();
    let total: f64 = latencies.iter().sum();
    latencies.sort_by(f64::total_cmp);
    Ok(Summary {
        queries: measured.len(),
        warmup_boundary,
        hit_ratio: if requested == 0 {
            0.0
        } else {
            hits as f64 / requested as f64
        },
        mean_latency_us: total / measured.len() as f64,
        p50_us: nearest_rank(&latencies, 50),
        p95_us: nearest_rank(&latencies, 95),
        p99_us: nearest_rank(&latencies, 99),
        total_bytes_read: measured.iter().map(|r| r.bytes_read).sum(),
    })
}
