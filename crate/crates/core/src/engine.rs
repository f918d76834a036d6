//! Disk-based IVF search over a cluster cache.
//!
//! A query maps to its nearest centroids, scans the cache for those clusters,
//! loads the misses from disk, concatenates every fetched payload into one
//! candidate list and runs exact top-k over it.
//!
//! When a plan is executed with prefetching enabled, the clusters of the next
//! group's first query are loaded right after the current group's last query.
//! In simulated mode the prefetch overlaps the inter-query arrival gap; any
//! load time left over when the next query arrives is charged to that query's
//! `load_cost_us`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, CacheStats, ClusterCache, LoadedCluster, Payload};
use crate::error::{Error, Result};
use crate::grouping::{ClusterSet, GroupPlan, QueryId};
use crate::ivf::{nearest_centroids, ClusterId, IvfManifest};
use crate::store::{ClusterStore, IoCostModel, IoMode};
use crate::vector::{top_k, ScoredHit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query_id: QueryId,
    pub query_vector: Vec<f32>,
    pub k: usize,
    pub nprobe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: QueryId,
    pub group_id: Option<u32>,
    pub clusters_requested: u32,
    pub cache_hits: u32,
    pub demand_misses: u32,
    /// Demand reads plus, on the query that triggered it, the prefetch.
    pub bytes_read: u64,
    pub load_cost_us: f64,
    pub compute_cost_us: f64,
    pub total_latency_us: f64,
    pub prefetch_triggered: bool,
}

impl QueryMetrics {
    fn new(query_id: QueryId) -> Self {
        Self {
            query_id,
            group_id: None,
            clusters_requested: 0,
            cache_hits: 0,
            demand_misses: 0,
            bytes_read: 0,
            load_cost_us: 0.0,
            compute_cost_us: 0.0,
            total_latency_us: 0.0,
            prefetch_triggered: false,
        }
    }
}

/// Outcome of one query inside a plan or baseline run.
#[derive(Debug, Clone)]
pub struct QueryRun {
    pub metrics: QueryMetrics,
    pub hits: std::result::Result<Vec<ScoredHit>, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Baseline,
    Qg,
    Qgp,
}

impl ExecMode {
    pub const ALL: [ExecMode; 3] = [ExecMode::Baseline, ExecMode::Qg, ExecMode::Qgp];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExecMode::Baseline => "baseline",
            ExecMode::Qg => "qg",
            ExecMode::Qgp => "qgp",
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ExecMode::Baseline),
            "qg" => Ok(ExecMode::Qg),
            "qgp" => Ok(ExecMode::Qgp),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

struct Background {
    handle: JoinHandle<u64>,
    /// Index in the run list of the query that triggered the prefetch.
    trigger: usize,
}

pub struct SearchEngine {
    store: ClusterStore,
    cache: Arc<Mutex<ClusterCache>>,
    arrival_gap_us: f64,
    pending_residual_us: f64,
    background: Option<Background>,
}

impl SearchEngine {
    pub fn new(
        manifest: Arc<IvfManifest>,
        cache: CacheConfig,
        cost_model: IoCostModel,
        arrival_gap_us: f64,
    ) -> Result<Self> {
        cost_model.validate()?;
        if !manifest.is_profiled() {
            return Err(Error::InvalidArgument(
                "manifest has unprofiled clusters; run profiling first".into(),
            ));
        }
        if !(arrival_gap_us.is_finite() && arrival_gap_us >= 0.0) {
            return Err(Error::InvalidArgument("arrival gap must be >= 0".into()));
        }
        Ok(Self {
            store: ClusterStore::new(manifest, cost_model),
            cache: Arc::new(Mutex::new(ClusterCache::new(cache)?)),
            arrival_gap_us,
            pending_residual_us: 0.0,
            background: None,
        })
    }

    pub fn manifest(&self) -> &IvfManifest {
        self.store.manifest()
    }

    pub fn cost_model(&self) -> &IoCostModel {
        self.store.cost_model()
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.lock().stats()
    }

    pub fn resident(&self) -> Vec<ClusterId> {
        self.lock().resident()
    }

    /// Bytes read from cluster files by this engine, prefetches included.
    pub fn bytes_read(&self) -> u64 {
        self.store.bytes_read()
    }

    fn lock(&self) -> MutexGuard<'_, ClusterCache> {
        self.cache.lock().expect("cluster cache lock poisoned")
    }

    /// Runs one query through the full pipeline.
    pub fn search_one(&mut self, request: &SearchRequest) -> Result<(Vec<ScoredHit>, QueryMetrics)> {
        let (hits, metrics) = self.run_query(request);
        hits.map(|h| (h, metrics))
    }

    fn run_query(&mut self, request: &SearchRequest) -> (Result<Vec<ScoredHit>>, QueryMetrics) {
        let mut metrics = QueryMetrics::new(request.query_id);
        metrics.load_cost_us = std::mem::take(&mut self.pending_residual_us);
        let result = self.search_inner(request, &mut metrics);
        metrics.total_latency_us = metrics.load_cost_us + metrics.compute_cost_us;
        (result, metrics)
    }

    fn search_inner(&mut self, request: &SearchRequest, metrics: &mut QueryMetrics) -> Result<Vec<ScoredHit>> {
        if request.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let clusters = nearest_centroids(&request.query_vector, self.manifest(), request.nprobe)?;
        metrics.clusters_requested = clusters.len() as u32;

        // scan the cache first, then fill the misses
        let mut fetched: Vec<Option<Payload>> = {
            let mut cache = self.lock();
            clusters.iter().map(|id| cache.get(id)).collect()
        };
        metrics.cache_hits = fetched.iter().filter(|p| p.is_some()).count() as u32;
        metrics.demand_misses = metrics.clusters_requested - metrics.cache_hits;

        for (slot, id) in fetched.iter_mut().zip(clusters.iter()) {
            if slot.is_some() {
                continue;
            }
            let (records, cost) = self.store.read(id).map_err(|e| Error::ClusterRead {
                cluster_id: id,
                source: Box::new(e),
            })?;
            metrics.load_cost_us += cost;
            metrics.bytes_read += self.manifest().entry(id)?.byte_size;
            let payload = Arc::new(records);
            let profiled = self.manifest().profiled_cost(id)?;
            self.lock().insert(id, Arc::clone(&payload), profiled);
            *slot = Some(payload);
        }

        let start = Instant::now();
        let candidates = fetched.iter().flatten().flat_map(|p| p.iter());
        let hits = top_k(&request.query_vector, candidates, request.k)?;
        let candidate_floats: u64 = fetched
            .iter()
            .flatten()
            .map(|p| p.len() as u64)
            .sum::<u64>()
            * self.manifest().dimension as u64;
        metrics.compute_cost_us = match self.cost_model().mode {
            IoMode::Simulated => self.cost_model().compute_cost_us(candidate_floats),
            IoMode::Real => start.elapsed().as_secs_f64() * 1e6,
        };
        Ok(hits)
    }

    /// Executes queries in plan order. With `prefetch` set, the clusters of
    /// the next group's first query are loaded after each group but the last.
    pub fn execute_plan(
        &mut self,
        plan: &GroupPlan,
        requests: &HashMap<QueryId, SearchRequest>,
        prefetch: bool,
    ) -> Result<Vec<QueryRun>> {
        if let Some(q) = plan.dispatch_order().find(|q| !requests.contains_key(&q.query_id)) {
            return Err(Error::MissingRequest(q.query_id));
        }
        let mut runs = Vec::with_capacity(plan.len());
        for pg in &plan.groups {
            for q in &pg.group.queries {
                let (hits, mut metrics) = self.run_query(&requests[&q.query_id]);
                metrics.group_id = Some(pg.group.group_id);
                runs.push(QueryRun {
                    metrics,
                    hits: hits.map_err(|e| e.to_string()),
                });
            }
            if let (true, Some(next)) = (prefetch, &pg.next_first_query) {
                let trigger = runs.len() - 1;
                runs[trigger].metrics.prefetch_triggered = true;
                let bytes = self.prefetch(&next.clusters, trigger, &mut runs);
                runs[trigger].metrics.bytes_read += bytes;
            }
        }
        self.join_background(&mut runs);
        Ok(runs)
    }

    /// Executes queries in arrival order with no grouping and no prefetch.
    pub fn baseline_execute(&mut self, requests: &[SearchRequest]) -> Vec<QueryRun> {
        requests
            .iter()
            .map(|r| {
                let (hits, metrics) = self.run_query(r);
                QueryRun {
                    metrics,
                    hits: hits.map_err(|e| e.to_string()),
                }
            })
            .collect()
    }

    /// Returns the bytes read synchronously; background reads are credited
    /// to the trigger when joined.
    fn prefetch(&mut self, clusters: &ClusterSet, trigger: usize, runs: &mut [QueryRun]) -> u64 {
        match self.cost_model().mode {
            IoMode::Simulated => {
                let store = self.store.clone();
                let mut cost = 0.0;
                let mut bytes = 0;
                self.lock().prefetch(clusters, |id| {
                    let loaded = load_for_prefetch(&store, id)?;
                    cost += loaded.1;
                    bytes += loaded.2;
                    Ok(loaded.0)
                });
                self.pending_residual_us = (cost - self.arrival_gap_us).max(0.0);
                bytes
            }
            IoMode::Real => {
                self.join_background(runs);
                let store = self.store.clone();
                let cache = Arc::clone(&self.cache);
                let clusters = clusters.clone();
                let handle = std::thread::spawn(move || {
                    let missing: Vec<ClusterId> = {
                        let mut c = cache.lock().expect("cluster cache lock poisoned");
                        clusters.iter().filter(|&id| !c.touch(id)).collect()
                    };
                    let mut loaded: HashMap<ClusterId, LoadedCluster> = HashMap::new();
                    let mut bytes = 0;
                    for id in missing {
                        if let Ok((l, _, b)) = load_for_prefetch(&store, id) {
                            bytes += b;
                            loaded.insert(id, l);
                        }
                    }
                    let ids = ClusterSet::from_ids(loaded.keys().copied());
                    let mut c = cache.lock().expect("cluster cache lock poisoned");
                    c.prefetch(&ids, |id| {
                        loaded.remove(&id).ok_or(Error::UnknownCluster(id))
                    });
                    bytes
                });
                self.background = Some(Background { handle, trigger });
                0
            }
        }
    }

    fn join_background(&mut self, runs: &mut [QueryRun]) {
        if let Some(bg) = self.background.take() {
            let bytes = bg.handle.join().unwrap_or(0);
            if let Some(run) = runs.get_mut(bg.trigger) {
                run.metrics.bytes_read += bytes;
            }
        }
    }
}

fn load_for_prefetch(store: &ClusterStore, id: ClusterId) -> Result<(LoadedCluster, f64, u64)> {
    let (records, cost) = store.read(id)?;
    let manifest = store.manifest();
    Ok((
        LoadedCluster {
            records: Arc::new(records),
            profiled_cost_us: manifest.profiled_cost(id)?,
        },
        cost,
        manifest.entry(id)?.byte_size,
    ))
}
