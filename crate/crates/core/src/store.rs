//! On-disk cluster files, cluster reads and read-cost profiling.
//!
//! A cluster file is a 16-byte header followed by packed records, all
//! little-endian:
//!
//! ```text
//! magic "CGR1" | cluster_id u32 | vector_count u32 | dimension u32
//! vector_count x ( id u64 | dimension x f32 )
//! ```
//!
//! Costs are carried as `f64` microseconds. In simulated mode a read costs
//! `base_seek + byte_size / bandwidth` and no wall clock is consulted.

use std::fs::File;
use std::io::{BufWriter, ErrorKind, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ivf::{ClusterId, IvfManifest};
use crate::vector::VectorRecord;

pub const CLUSTER_MAGIC: [u8; 4] = *b"CGR1";
pub const CLUSTER_HEADER_LEN: u64 = 16;

/// Bytes one record occupies in a cluster file body.
pub fn record_len(dimension: usize) -> u64 {
    8 + 4 * dimension as u64
}

pub fn cluster_file_len(vector_count: usize, dimension: usize) -> u64 {
    CLUSTER_HEADER_LEN + vector_count as u64 * record_len(dimension)
}

/// Writes `records` as a cluster file and returns the file size in bytes.
pub fn write_cluster(cluster_id: ClusterId, records: &[VectorRecord], path: &Path) -> Result<u64> {
    let Some(first) = records.first() else {
        return Err(Error::InvalidArgument(format!(
            "cluster {cluster_id} has no records"
        )));
    };
    let dimension = first.dimension();
    for r in records {
        crate::vector::check_dimension(dimension, r.dimension())?;
    }
    let count = u32::try_from(records.len())
        .map_err(|_| Error::InvalidArgument("too many records for one cluster".into()))?;

    let mut buf = Vec::with_capacity(cluster_file_len(records.len(), dimension) as usize);
    buf.extend_from_slice(&CLUSTER_MAGIC);
    buf.extend_from_slice(&cluster_id.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(dimension as u32).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&r.id.to_le_bytes());
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(buf.len() as u64)
}

/// Decodes a cluster file, checking that its header names `expected_id`.
pub fn read_cluster_file(path: &Path, expected_id: ClusterId) -> Result<Vec<VectorRecord>> {
    let mut file = File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::ClusterMissing {
            path: path.to_path_buf(),
        },
        _ => Error::io(path, e),
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode_cluster(&bytes, path, expected_id)
}

fn decode_cluster(bytes: &[u8], path: &Path, expected_id: ClusterId) -> Result<Vec<VectorRecord>> {
    let actual = bytes.len() as u64;
    if actual < CLUSTER_HEADER_LEN {
        if actual >= 4 && bytes[..4] != CLUSTER_MAGIC {
            return Err(bad_magic(path, bytes));
        }
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: CLUSTER_HEADER_LEN,
            actual,
        });
    }
    if bytes[..4] != CLUSTER_MAGIC {
        return Err(bad_magic(path, bytes));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let cluster_id = word(4);
    let count = word(8) as usize;
    let dimension = word(12) as usize;
    if cluster_id != expected_id {
        return Err(Error::ClusterIdMismatch {
            path: path.to_path_buf(),
            expected: expected_id,
            found: cluster_id,
        });
    }
    let expected = cluster_file_len(count, dimension);
    if actual != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }

    let stride = record_len(dimension) as usize;
    let body = &bytes[CLUSTER_HEADER_LEN as usize..];
    let records = body
        .chunks_exact(stride)
        .map(|chunk| {
            let id = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let values = chunk[8..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            VectorRecord { id, values }
        })
        .collect();
    Ok(records)
}

fn bad_magic(path: &Path, bytes: &[u8]) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: CLUSTER_MAGIC,
        found: bytes[..4].try_into().unwrap(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoMode {
    Real,
    Simulated,
}

/// Read and compute cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoCostModel {
    pub mode: IoMode,
    pub base_seek_us: f64,
    pub bandwidth_bytes_per_sec: f64,
    pub compute_ns_per_float: f64,
}

impl Default for IoCostModel {
    fn default() -> Self {
        Self::simulated()
    }
}

impl IoCostModel {
    /// 100 us seek, 2 GB/s, 1 ns per float.
    pub fn simulated() -> Self {
        Self {
            mode: IoMode::Simulated,
            base_seek_us: 100.0,
            bandwidth_bytes_per_sec: 2e9,
            compute_ns_per_float: 1.0,
        }
    }

    pub fn real() -> Self {
        Self {
            mode: IoMode::Real,
            ..Self::simulated()
        }
    }

    pub fn is_simulated(&self) -> bool {
        self.mode == IoMode::Simulated
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_seek_us.is_finite()
            && self.base_seek_us >= 0.0
            && self.bandwidth_bytes_per_sec.is_finite()
            && self.bandwidth_bytes_per_sec > 0.0
            && self.compute_ns_per_float.is_finite()
            && self.compute_ns_per_float >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid cost model {self:?}")))
        }
    }

    /// Modelled read cost of a cluster file, in microseconds.
    pub fn read_cost_us(&self, byte_size: u64) -> f64 {
        self.base_seek_us + byte_size as f64 * 1e6 / self.bandwidth_bytes_per_sec
    }

    /// Modelled scan cost over `floats` candidate components, in microseconds.
    pub fn compute_cost_us(&self, floats: u64) -> f64 {
        floats as f64 * self.compute_ns_per_float / 1000.0
    }
}

/// Reads cluster payloads for one manifest and counts every byte it reads.
#[derive(Debug, Clone)]
pub struct ClusterStore {
    manifest: Arc<IvfManifest>,
    cost_model: IoCostModel,
    bytes_read: Arc<AtomicU64>,
}

impl ClusterStore {
    pub fn new(manifest: Arc<IvfManifest>, cost_model: IoCostModel) -> Self {
        Self {
            manifest,
            cost_model,
            bytes_read: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn manifest(&self) -> &Arc<IvfManifest> {
        &self.manifest
    }

    pub fn cost_model(&self) -> &IoCostModel {
        &self.cost_model
    }

    /// Total bytes read through this store (and its clones).
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read.load(Ordering::Relaxed)
    }

    /// Loads a cluster and reports the cost of doing so in microseconds.
    pub fn read(&self, cluster_id: ClusterId) -> Result<(Vec<VectorRecord>, f64)> {
        let (records, cost) = read_cluster(cluster_id, &self.manifest, &self.cost_model)?;
        let size = self.manifest.entry(cluster_id)?.byte_size;
        self.bytes_read.fetch_add(size, Ordering::Relaxed);
        Ok((records, cost))
    }
}

/// Loads every record of `cluster_id`. The returned cost is wall-clock time
/// in real mode and the model value in simulated mode.
pub fn read_cluster(
    cluster_id: ClusterId,
    manifest: &IvfManifest,
    cost_model: &IoCostModel,
) -> Result<(Vec<VectorRecord>, f64)> {
    let entry = manifest.entry(cluster_id)?;
    let path = manifest.cluster_path(cluster_id)?;
    let start = Instant::now();
    let records = read_cluster_file(&path, cluster_id)?;
    let cost = match cost_model.mode {
        IoMode::Real => start.elapsed().as_secs_f64() * 1e6,
        IoMode::Simulated => cost_model.read_cost_us(entry.byte_size),
    };
    Ok((records, cost))
}

/// Records a read cost for every cluster and saves the manifest.
///
/// Real mode stores the median of `repetitions` timed reads; simulated mode
/// stores the model value.
pub fn profile_clusters(
    manifest: &mut IvfManifest,
    cost_model: &IoCostModel,
    repetitions: usize,
) -> Result<()> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be positive".into()));
    }
    let mut failed = Vec::new();
    let mut costs = Vec::with_capacity(manifest.clusters.len());
    for (&id, entry) in &manifest.clusters {
        let path = match manifest.cluster_path(id) {
            Ok(p) => p,
            Err(_) => {
                failed.push(id);
                continue;
            }
        };
        let mut observed = Vec::with_capacity(repetitions);
        let mut ok = true;
        for _ in 0..repetitions {
            let start = Instant::now();
            if read_cluster_file(&path, id).is_err() {
                ok = false;
                break;
            }
            observed.push(start.elapsed().as_secs_f64() * 1e6);
        }
        if !ok {
            failed.push(id);
            continue;
        }
        let cost = match cost_model.mode {
            IoMode::Real => median(&mut observed),
            IoMode::Simulated => cost_model.read_cost_us(entry.byte_size),
        };
        costs.push((id, cost));
    }
    if !failed.is_empty() {
        return Err(Error::ProfileFailed(failed));
    }
    for (id, cost) in costs {
        if let Some(entry) = manifest.clusters.get_mut(&id) {
            entry.profiled_read_cost_us = Some(cost);
        }
    }
    manifest.save()
}

/// Median of a nonempty sample; the lower middle element for even lengths.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}
