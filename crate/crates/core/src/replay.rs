//! Replays a batch trace through the baseline, grouped and grouped+prefetch
//! engines and collects per-query rows and summaries.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, CachePolicy, CacheStats, DEFAULT_CAPACITY};
use crate::engine::{ExecMode, QueryRun, SearchEngine, SearchRequest};
use crate::error::{Error, Result};
use crate::grouping::{plan_queries, ClusterSet, GroupingConfig, PlannedQuery, QueryId};
use crate::ivf::{nearest_centroids, IvfManifest};
use crate::oracle::verify_rows;
use crate::report::{read_csv_file, summarize, write_csv_file, MetricsRow, Summary};
use crate::store::IoCostModel;
use crate::vector::ScoredHit;
use crate::workload::BatchTrace;

pub const SUMMARY_FILE: &str = "summary.json";

pub fn csv_file_name(mode: ExecMode) -> String {
    format!("per_query_{mode}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub k: usize,
    pub nprobe: usize,
    pub capacity: usize,
    /// Eviction policy of the grouped modes.
    pub policy: CachePolicy,
    pub baseline_policy: CachePolicy,
    pub grouping: GroupingConfig,
    pub cost_model: IoCostModel,
    pub arrival_gap_us: f64,
    /// Queries excluded from summaries; `None` means the first batch.
    pub warmup: Option<usize>,
    /// Run simulated modes on separate threads.
    pub parallel: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            k: 10,
            nprobe: 10,
            capacity: DEFAULT_CAPACITY,
            policy: CachePolicy::Lru,
            baseline_policy: CachePolicy::CostAware,
            grouping: GroupingConfig::default(),
            cost_model: IoCostModel::simulated(),
            arrival_gap_us: 0.0,
            warmup: None,
            parallel: true,
        }
    }
}

impl ReplayConfig {
    pub fn policy_for(&self, mode: ExecMode) -> CachePolicy {
        match mode {
            ExecMode::Baseline => self.baseline_policy,
            ExecMode::Qg | ExecMode::Qgp => self.policy,
        }
    }

    pub fn warmup_boundary(&self, trace: &BatchTrace) -> usize {
        self.warmup
            .unwrap_or_else(|| trace.batches.first().map_or(0, |b| b.queries.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query_id: QueryId,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ModeReport {
    pub mode: ExecMode,
    pub policy: CachePolicy,
    /// Execution order.
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    pub failures: Vec<QueryFailure>,
    pub results: BTreeMap<QueryId, Vec<ScoredHit>>,
    pub cache_stats: CacheStats,
    /// Bytes counted by the cluster store during this run.
    pub store_bytes_read: u64,
}

impl ModeReport {
    pub fn result_hashes(&self) -> BTreeMap<QueryId, u64> {
        self.results.iter().map(|(&q, hits)| (q, result_hash(hits))).collect()
    }

    pub fn total_row_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.bytes_read).sum()
    }
}

/// Hash of the ranked `(id, distance bits)` list.
pub fn result_hash(hits: &[ScoredHit]) -> u64 {
    let mut h = DefaultHasher::new();
    for hit in hits {
        hit.id.hash(&mut h);
        hit.distance.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub warmup_boundary: usize,
    pub modes: Vec<ModeReport>,
}

impl ReplayReport {
    pub fn mode(&self, mode: ExecMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModeSummaryFile {
    pub mode: ExecMode,
    pub policy: CachePolicy,
    pub summary: Summary,
    pub failures: Vec<QueryFailure>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub warmup_boundary: usize,
    pub config: ReplayConfig,
    pub modes: Vec<ModeSummaryFile>,
}

/// Cluster sets of every query in the trace, in trace order.
pub fn trace_cluster_sets(trace: &BatchTrace, manifest: &IvfManifest, nprobe: usize) -> Result<Vec<Vec<PlannedQuery>>> {
    if trace.metadata.dimension != manifest.dimension {
        return Err(Error::DimensionMismatch {
            expected: manifest.dimension,
            actual: trace.metadata.dimension,
        });
    }
    trace
        .batches
        .iter()
        .map(|b| {
            b.queries
                .iter()
                .map(|q| {
                    nearest_centroids(&q.vector, manifest, nprobe)
                        .map(|clusters| PlannedQuery::new(q.query_id, clusters))
                })
                .collect()
        })
        .collect()
}

pub fn replay(
    trace: &BatchTrace,
    manifest: Arc<IvfManifest>,
    config: &ReplayConfig,
    modes: &[ExecMode],
) -> Result<ReplayReport> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no modes to replay".into()));
    }
    trace.validate()?;
    config.grouping.validate()?;
    let warmup_boundary = config.warmup_boundary(trace);
    if warmup_boundary >= trace.query_count() {
        return Err(Error::InvalidArgument(format!(
            "warmup of {warmup_boundary} queries leaves none of {} to measure",
            trace.query_count()
        )));
    }
    let batches = trace_cluster_sets(trace, &manifest, config.nprobe)?;
    let requests: HashMap<QueryId, SearchRequest> = trace
        .queries()
        .map(|q| {
            (
                q.query_id,
                SearchRequest {
                    query_id: q.query_id,
                    query_vector: q.vector.clone(),
                    k: config.k,
                    nprobe: config.nprobe,
                },
            )
        })
        .collect();

    let run = |mode: ExecMode| run_mode(mode, trace, &batches, &requests, Arc::clone(&manifest), config, warmup_boundary);
    let reports = if config.parallel && config.cost_model.is_simulated() && modes.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = modes.iter().map(|&m| s.spawn(move || run(m))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("replay thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        modes.iter().map(|&m| run(m)).collect::<Result<Vec<_>>>()?
    };
    Ok(ReplayReport {
        warmup_boundary,
        modes: reports,
    })
}

fn run_mode(
    mode: ExecMode,
    trace: &BatchTrace,
    batches: &[Vec<PlannedQuery>],
    requests: &HashMap<QueryId, SearchRequest>,
    manifest: Arc<IvfManifest>,
    config: &ReplayConfig,
    warmup_boundary: usize,
) -> Result<ModeReport> {
    let policy = config.policy_for(mode);
    let mut engine = SearchEngine::new(
        manifest,
        CacheConfig::new(config.capacity, policy),
        config.cost_model,
        config.arrival_gap_us,
    )?;
    let mut runs: Vec<QueryRun> = Vec::with_capacity(trace.query_count());
    let mut group_offset = 0u32;
    for (batch, planned) in trace.batches.iter().zip(batches) {
        match mode {
            ExecMode::Baseline => {
                let reqs: Vec<SearchRequest> =
                    batch.queries.iter().map(|q| requests[&q.query_id].clone()).collect();
                runs.extend(engine.baseline_execute(&reqs));
            }
            ExecMode::Qg | ExecMode::Qgp => {
                let mut plan = plan_queries(planned, &config.grouping)?;
                for g in &mut plan.groups {
                    g.group.group_id += group_offset;
                }
                group_offset += plan.groups.len() as u32;
                runs.extend(engine.execute_plan(&plan, requests, mode == ExecMode::Qgp)?);
            }
        }
    }

    let rows: Vec<MetricsRow> = runs.iter().map(|r| MetricsRow::from_metrics(&r.metrics, mode)).collect();
    let mut failures = Vec::new();
    let mut results = BTreeMap::new();
    for r in runs {
        match r.hits {
            Ok(hits) => {
                results.insert(r.metrics.query_id, hits);
            }
            Err(error) => failures.push(QueryFailure {
                query_id: r.metrics.query_id,
                error,
            }),
        }
    }
    let summary = summarize(&rows, warmup_boundary)?;
    Ok(ModeReport {
        mode,
        policy,
        rows,
        summary,
        failures,
        results,
        cache_stats: engine.cache_stats(),
        store_bytes_read: engine.bytes_read(),
    })
}

/// Writes one CSV per mode and `summary.json` into `out_dir`.
pub fn write_report(report: &ReplayReport, config: &ReplayConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for m in &report.modes {
        let path = out_dir.join(csv_file_name(m.mode));
        write_csv_file(&m.rows, &path)?;
        written.push(path);
    }
    let file = SummaryFile {
        warmup_boundary: report.warmup_boundary,
        config: config.clone(),
        modes: report
            .modes
            .iter()
            .map(|m| ModeSummaryFile {
                mode: m.mode,
                policy: m.policy,
                summary: m.summary.clone(),
                failures: m.failures.clone(),
            })
            .collect(),
    };
    let path = out_dir.join(SUMMARY_FILE);
    let bytes = serde_json::to_vec_pretty(&file).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Re-reads the written CSVs and checks them against the oracle cache,
/// the store byte counters and the JSON summary.
pub fn verify_written(
    report: &ReplayReport,
    trace: &BatchTrace,
    manifest: &IvfManifest,
    config: &ReplayConfig,
    out_dir: &Path,
) -> Result<()> {
    let sets: HashMap<QueryId, ClusterSet> = trace_cluster_sets(trace, manifest, config.nprobe)?
        .into_iter()
        .flatten()
        .map(|p| (p.query_id, p.clusters))
        .collect();
    let path = out_dir.join(SUMMARY_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let summary_file: SummaryFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;

    for m in &report.modes {
        let rows = read_csv_file(&out_dir.join(csv_file_name(m.mode)))?;
        verify_rows(&rows, &sets, manifest, config.capacity, m.policy)?;
        let bytes: u64 = rows.iter().map(|r| r.bytes_read).sum();
        if bytes != m.store_bytes_read {
            return Err(Error::Divergence(format!(
                "{}: rows account for {bytes} bytes, the store read {}",
                m.mode, m.store_bytes_read
            )));
        }
        let written = summary_file
            .modes
            .iter()
            .find(|s| s.mode == m.mode)
            .ok_or_else(|| Error::Divergence(format!("{} missing from {SUMMARY_FILE}", m.mode)))?;
        if summarize(&rows, summary_file.warmup_boundary)? != written.summary {
            return Err(Error::Divergence(format!(
                "{}: summary of the reparsed CSV differs from {SUMMARY_FILE}",
                m.mode
            )));
        }
    }

    let mut modes = report.modes.iter();
    if let Some(first) = modes.next() {
        let reference = first.result_hashes();
        for m in modes {
            if m.result_hashes() != reference {
                return Err(Error::Divergence(format!(
                    "{} and {} return different results",
                    first.mode, m.mode
                )));
            }
        }
    }
    Ok(())
}
