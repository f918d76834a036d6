//! Bounded in-memory cache of cluster payloads.
//!
//! Capacity is counted in entries. Two eviction policies are available:
//!
//! * `CostAware` evicts the entry with the smallest
//!   `access_count * profiled_cost`, falling back to the least recent touch.
//!   Fresh entries start with an access count of zero.
//! * `Lru` evicts the least recently touched entry.
//!
//! Hits and inserts both count as touches. Prefetch loads go through the same
//! eviction path as demand fills and are counted separately in [`CacheStats`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::ClusterSet;
use crate::ivf::ClusterId;
use crate::store::cluster_file_len;
use crate::vector::VectorRecord;

pub type Payload = Arc<Vec<VectorRecord>>;

pub const DEFAULT_CAPACITY: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    CostAware,
    Lru,
}

impl fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CachePolicy::CostAware => "cost-aware",
            CachePolicy::Lru => "lru",
        })
    }
}

impl FromStr for CachePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cost-aware" | "cost_aware" => Ok(CachePolicy::CostAware),
            "lru" => Ok(CachePolicy::Lru),
            other => Err(Error::InvalidArgument(format!("unknown cache policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity_entries: usize,
    pub policy: CachePolicy,
}

impl CacheConfig {
    pub fn new(capacity_entries: usize, policy: CachePolicy) -> Self {
        Self {
            capacity_entries,
            policy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub cluster_id: ClusterId,
    pub records: Payload,
    pub byte_size: u64,
    pub access_count: u64,
    pub profiled_cost_us: f64,
    pub last_touch: u64,
}

impl CacheEntry {
    fn score(&self) -> f64 {
        self.access_count as f64 * self.profiled_cost_us
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub demand_misses: u64,
    pub prefetch_loads: u64,
    pub evictions: u64,
    pub bytes_loaded: u64,
}

/// A cluster produced by a prefetch loader.
#[derive(Debug, Clone)]
pub struct LoadedCluster {
    pub records: Payload,
    pub profiled_cost_us: f64,
}

#[derive(Debug, Default)]
pub struct PrefetchOutcome {
    pub loaded: Vec<ClusterId>,
    pub evicted: Vec<ClusterId>,
    pub failed: Vec<(ClusterId, Error)>,
}

#[derive(Debug)]
pub struct ClusterCache {
    config: CacheConfig,
    entries: HashMap<ClusterId, CacheEntry>,
    clock: u64,
    stats: CacheStats,
}

impl ClusterCache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        if config.capacity_entries == 0 {
            return Err(Error::InvalidArgument("cache capacity must be positive".into()));
        }
        Ok(Self {
            config,
            entries: HashMap::with_capacity(config.capacity_entries + 1),
            clock: 0,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, cluster_id: ClusterId) -> bool {
        self.entries.contains_key(&cluster_id)
    }

    pub fn entry(&self, cluster_id: ClusterId) -> Option<&CacheEntry> {
        self.entries.get(&cluster_id)
    }

    /// Resident cluster ids in ascending order.
    pub fn resident(&self) -> Vec<ClusterId> {
        let mut ids: Vec<ClusterId> = self.entries.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Looks up a cluster. A hit bumps the entry's access count and recency;
    /// a miss leaves the cache unchanged apart from the miss counter.
    pub fn get(&mut self, cluster_id: ClusterId) -> Option<Payload> {
        let now = self.clock + 1;
        match self.entries.get_mut(&cluster_id) {
            Some(e) => {
                e.access_count += 1;
                e.last_touch = now;
                self.clock = now;
                self.stats.hits += 1;
                Some(Arc::clone(&e.records))
            }
            None => {
                self.stats.demand_misses += 1;
                None
            }
        }
    }

    /// Makes `cluster_id` resident, evicting per policy if the cache is full.
    /// Re-inserting a resident id refreshes its payload without evicting.
    pub fn insert(&mut self, cluster_id: ClusterId, records: Payload, profiled_cost_us: f64) -> Vec<ClusterId> {
        let byte_size = payload_bytes(&records);
        self.stats.bytes_loaded += byte_size;
        let now = self.tick();
        if let Some(e) = self.entries.get_mut(&cluster_id) {
            e.records = records;
            e.byte_size = byte_size;
            e.profiled_cost_us = profiled_cost_us;
            e.last_touch = now;
            return Vec::new();
        }

        let mut evicted = Vec::new();
        while self.entries.len() >= self.config.capacity_entries {
            let Some(victim) = self.victim() else { break };
            self.entries.remove(&victim);
            self.stats.evictions += 1;
            evicted.push(victim);
        }
        self.entries.insert(
            cluster_id,
            CacheEntry {
                cluster_id,
                records,
                byte_size,
                access_count: 0,
                profiled_cost_us,
                last_touch: now,
            },
        );
        evicted
    }

    fn victim(&self) -> Option<ClusterId> {
        match self.config.policy {
            CachePolicy::Lru => self.entries.values().min_by_key(|e| e.last_touch),
            CachePolicy::CostAware => self.entries.values().min_by(|a, b| {
                a.score()
                    .total_cmp(&b.score())
                    .then(a.last_touch.cmp(&b.last_touch))
            }),
        }
        .map(|e| e.cluster_id)
    }

    /// Refreshes the recency of a resident entry without counting an access.
    pub fn touch(&mut self, cluster_id: ClusterId) -> bool {
        let now = self.clock + 1;
        match self.entries.get_mut(&cluster_id) {
            Some(e) => {
                e.last_touch = now;
                self.clock = now;
                true
            }
            None => false,
        }
    }

    /// Touches the resident ids of `cluster_ids`, then loads the rest in
    /// ascending order. Failed loads are reported and skipped.
    pub fn prefetch<F>(&mut self, cluster_ids: &ClusterSet, mut loader: F) -> PrefetchOutcome
    where
        F: FnMut(ClusterId) -> Result<LoadedCluster>,
    {
        let mut outcome = PrefetchOutcome::default();
        let missing: Vec<ClusterId> = cluster_ids.iter().filter(|&id| !self.touch(id)).collect();
        for id in missing {
            match loader(id) {
                Ok(loaded) => {
                    self.stats.prefetch_loads += 1;
                    let ev = self.insert(id, loaded.records, loaded.profiled_cost_us);
                    outcome.evicted.extend(ev);
                    outcome.loaded.push(id);
                }
                Err(e) => outcome.failed.push((id, e)),
            }
        }
        outcome
    }
}

/// Size of the cluster file that holds `records`.
pub fn payload_bytes(records: &[VectorRecord]) -> u64 {
    let dim = records.first().map_or(0, |r| r.dimension());
    cluster_file_len(records.len(), dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn payload(id: u32) -> Payload {
        Arc::new(vec![VectorRecord::new(id as u64, vec![id as f32, 0.0])])
    }

    fn cache(capacity: usize, policy: CachePolicy) -> ClusterCache {
        ClusterCache::new(CacheConfig::new(capacity, policy)).unwrap()
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(ClusterCache::new(CacheConfig::new(0, CachePolicy::Lru)).is_err());
    }

    #[test]
    fn basic_get_insert() {
        let mut c = cache(2, CachePolicy::CostAware);
        assert!(c.get(7).is_none());
        c.insert(7, payload(7), 1.0);
        assert!(c.get(7).is_some());
        let s = c.stats();
        assert_eq!((s.hits, s.demand_misses, s.evictions), (1, 1, 0));
        assert_eq!(s.bytes_loaded, 16 + 16);

        let mut c = cache(1, CachePolicy::Lru);
        c.insert(1, payload(1), 1.0);
        assert_eq!(c.insert(2, payload(2), 1.0), vec![1]);
        assert!(c.get(1).is_none());
        assert_eq!(c.stats().evictions, 1);
    }

    #[test]
    fn cost_aware_evicts_lowest_score() {
        // A: count 3, cost 10ms -> 30; B: count 1, cost 50ms -> 50
        let mut c = cache(2, CachePolicy::CostAware);
        c.insert(0, payload(0), 10_000.0);
        c.insert(1, payload(1), 50_000.0);
        for _ in 0..3 {
            c.get(0);
        }
        c.get(1);
        assert_eq!(c.insert(2, payload(2), 1.0), vec![0]);
        assert_eq!(c.resident(), vec![1, 2]);
    }

    #[test]
    fn lru_evicts_least_recent() {
        let mut c = cache(2, CachePolicy::Lru);
        c.insert(0, payload(0), 1.0);
        c.insert(1, payload(1), 1.0);
        c.get(0);
        c.get(1);
        assert_eq!(c.insert(2, payload(2), 1.0), vec![0]);
    }

    #[test]
    fn reinsert_is_idempotent() {
        let mut c = cache(2, CachePolicy::CostAware);
        c.insert(0, payload(0), 1.0);
        c.insert(1, payload(1), 1.0);
        let fresh = Arc::new(vec![VectorRecord::new(99, vec![1.0, 1.0])]);
        assert!(c.insert(0, Arc::clone(&fresh), 2.0).is_empty());
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(0).unwrap(), fresh);
    }

    #[test]
    fn prefetch_behaviour() {
        let loader = |id: u32| {
            Ok(LoadedCluster {
                records: payload(id),
                profiled_cost_us: 5.0,
            })
        };
        let five = ClusterSet::from_ids([1, 3, 5, 7, 9]);

        let mut c = cache(5, CachePolicy::CostAware);
        let out = c.prefetch(&five, loader);
        assert_eq!(out.loaded.len(), 5);
        assert_eq!(c.resident(), vec![1, 3, 5, 7, 9]);
        assert_eq!(c.prefetch(&five, loader).loaded.len(), 0);
        let s = c.stats();
        assert_eq!((s.prefetch_loads, s.demand_misses, s.hits), (5, 0, 0));

        for policy in [CachePolicy::CostAware, CachePolicy::Lru] {
            let mut c = cache(3, policy);
            c.prefetch(&five, loader);
            assert_eq!(c.resident(), vec![5, 7, 9]);
            assert_eq!(c.stats().evictions, 2);
        }
    }

    #[test]
    fn prefetch_skips_failures() {
        let mut c = cache(4, CachePolicy::Lru);
        let out = c.prefetch(&ClusterSet::from_ids([1, 2, 3]), |id| {
            if id == 2 {
                Err(Error::UnknownCluster(2))
            } else {
                Ok(LoadedCluster {
                    records: payload(id),
                    profiled_cost_us: 1.0,
                })
            }
        });
        assert_eq!(out.loaded, vec![1, 3]);
        assert_eq!(out.failed.len(), 1);
        assert_eq!(c.resident(), vec![1, 3]);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Get(u32),
        Insert(u32, u8),
    }

    fn ops() -> impl Strategy<Value = Vec<Op>> {
        prop::collection::vec(
            prop_oneof![
                (0u32..12).prop_map(Op::Get),
                (0u32..12, 1u8..6).prop_map(|(id, c)| Op::Insert(id, c)),
            ],
            0..200,
        )
    }

    proptest! {
        #[test]
        fn capacity_never_exceeded(ops in ops(), cap in 1usize..6, lru in any::<bool>()) {
            let policy = if lru { CachePolicy::Lru } else { CachePolicy::CostAware };
            let mut c = cache(cap, policy);
            for op in ops {
                match op {
                    Op::Get(id) => { c.get(id); }
                    Op::Insert(id, cost) => {
                        // naive full scan over the pre-insert state
                        let expected = if !c.contains(id) && c.len() == cap {
                            let mut best: Option<&CacheEntry> = None;
                            for e in c.entries.values() {
                                let better = match best {
                                    None => true,
                                    Some(b) => match policy {
                                        CachePolicy::Lru => e.last_touch < b.last_touch,
                                        CachePolicy::CostAware => {
                                            let (se, sb) = (e.access_count as f64 * e.profiled_cost_us, b.access_count as f64 * b.profiled_cost_us);
                                            se < sb || (se == sb && e.last_touch < b.last_touch)
                                        }
                                    },
                                };
                                if better { best = Some(e); }
                            }
                            best.map(|e| vec![e.cluster_id]).unwrap_or_default()
                        } else {
                            Vec::new()
                        };
                        let evicted = c.insert(id, payload(id), cost as f64);
                        prop_assert_eq!(evicted, expected);
                    }
                }
                prop_assert!(c.len() <= cap);
            }
        }

        #[test]
        fn prefetched_then_demanded_hits(
            warm in prop::collection::vec(0u32..30, 0..60),
            next in prop::collection::btree_set(0u32..30, 1..8),
            cap in 8usize..12,
        ) {
            let mut c = cache(cap, CachePolicy::Lru);
            for id in warm {
                if c.get(id).is_none() {
                    c.insert(id, payload(id), 1.0);
                }
            }
            let set: ClusterSet = next.into_iter().collect();
            c.prefetch(&set, |id| Ok(LoadedCluster { records: payload(id), profiled_cost_us: 1.0 }));
            for id in set.iter() {
                prop_assert!(c.get(id).is_some());
            }
        }
    }
}
