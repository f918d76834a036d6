//! Brute-force reference implementations.
//!
//! Nothing here calls into the search, grouping or cache code. These are used
//! by the test suites and by `replay --verify`, which re-simulates every cache
//! decision of a run from its per-query CSV.

use std::collections::HashMap;

use crate::cache::CachePolicy;
use crate::error::{Error, Result};
use crate::grouping::{ClusterSet, QueryId};
use crate::ivf::{ClusterId, IvfManifest};
use crate::report::MetricsRow;
use crate::vector::{ScoredHit, VectorRecord};

/// Computes every distance, sorts all of them by `(distance, id)` and keeps
/// the first `k`.
pub fn oracle_knn(query: &[f32], corpus: &[VectorRecord], k: usize) -> Result<Vec<ScoredHit>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut all = Vec::with_capacity(corpus.len());
    for r in corpus {
        if r.values.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                actual: r.values.len(),
            });
        }
        let mut sum = 0.0f32;
        let mut i = 0;
        while i < query.len() {
            let d = query[i] - r.values[i];
            sum += d * d;
            i += 1;
        }
        all.push(ScoredHit {
            id: r.id,
            distance: sum,
        });
    }
    all.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .expect("finite distances")
            .then(a.id.cmp(&b.id))
    });
    all.truncate(k);
    Ok(all)
}

/// Materializes intersection and union element by element.
pub fn oracle_jaccard(a: &[ClusterId], b: &[ClusterId]) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptySets);
    }
    let mut union: Vec<ClusterId> = Vec::new();
    for &x in a.iter().chain(b) {
        if !union.contains(&x) {
            union.push(x);
        }
    }
    let mut intersection: Vec<ClusterId> = Vec::new();
    for &x in &union {
        if a.contains(&x) && b.contains(&x) {
            intersection.push(x);
        }
    }
    Ok(intersection.len() as f64 / union.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CacheOp {
    Get(ClusterId),
    Insert { id: ClusterId, cost_us: f64 },
    /// Touches the resident ids, then inserts the others in the given order.
    Prefetch(Vec<(ClusterId, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheEvent {
    Hit(ClusterId),
    Miss(ClusterId),
    Load(ClusterId),
    Evict(ClusterId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheSimOutcome {
    /// Ascending.
    pub resident: Vec<ClusterId>,
    pub log: Vec<CacheEvent>,
}

#[derive(Debug, Clone)]
struct SimEntry {
    id: ClusterId,
    count: u64,
    cost: f64,
    touch: u64,
}

/// Straight-line cache model: a flat list and a full scan for every eviction.
#[derive(Debug)]
pub struct OracleCache {
    capacity: usize,
    policy: CachePolicy,
    entries: Vec<SimEntry>,
    clock: u64,
}

impl OracleCache {
    pub fn new(capacity: usize, policy: CachePolicy) -> Self {
        Self {
            capacity,
            policy,
            entries: Vec::new(),
            clock: 0,
        }
    }

    fn find(&self, id: ClusterId) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn apply(&mut self, op: &CacheOp, log: &mut Vec<CacheEvent>) {
        match op {
            CacheOp::Get(id) => match self.find(*id) {
                Some(i) => {
                    self.clock += 1;
                    self.entries[i].count += 1;
                    self.entries[i].touch = self.clock;
                    log.push(CacheEvent::Hit(*id));
                }
                None => log.push(CacheEvent::Miss(*id)),
            },
            CacheOp::Insert { id, cost_us } => self.insert(*id, *cost_us, log),
            CacheOp::Prefetch(items) => {
                let mut missing = Vec::new();
                for &(id, cost) in items {
                    match self.find(id) {
                        Some(i) => {
                            self.clock += 1;
                            self.entries[i].touch = self.clock;
                        }
                        None => missing.push((id, cost)),
                    }
                }
                for (id, cost) in missing {
                    self.insert(id, cost, log);
                }
            }
        }
    }

    fn insert(&mut self, id: ClusterId, cost: f64, log: &mut Vec<CacheEvent>) {
        self.clock += 1;
        if let Some(i) = self.find(id) {
            self.entries[i].cost = cost;
            self.entries[i].touch = self.clock;
            return;
        }
        while self.entries.len() >= self.capacity && !self.entries.is_empty() {
            let mut victim = 0;
            for i in 1..self.entries.len() {
                let (e, v) = (&self.entries[i], &self.entries[victim]);
                let lower = match self.policy {
                    CachePolicy::Lru => e.touch < v.touch,
                    CachePolicy::CostAware => {
                        let se = e.count as f64 * e.cost;
                        let sv = v.count as f64 * v.cost;
                        se < sv || (se == sv && e.touch < v.touch)
                    }
                };
                if lower {
                    victim = i;
                }
            }
            let gone = self.entries.remove(victim);
            log.push(CacheEvent::Evict(gone.id));
        }
        self.entries.push(SimEntry {
            id,
            count: 0,
            cost,
            touch: self.clock,
        });
        log.push(CacheEvent::Load(id));
    }

    pub fn is_resident(&self, id: ClusterId) -> bool {
        self.find(id).is_some()
    }

    pub fn resident(&self) -> Vec<ClusterId> {
        let mut ids: Vec<ClusterId> = self.entries.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Replays `ops` against a fresh oracle cache.
pub fn oracle_cache_sim(ops: &[CacheOp], capacity: usize, policy: CachePolicy) -> CacheSimOutcome {
    let mut cache = OracleCache::new(capacity, policy);
    let mut log = Vec::new();
    for op in ops {
        cache.apply(op, &mut log);
    }
    CacheSimOutcome {
        resident: cache.resident(),
        log,
    }
}

/// Re-derives every query's hit and miss counts, and its bytes read, from
/// the rows of one mode's CSV (in execution order) and fails on the first
/// divergence.
pub fn verify_rows(
    rows: &[MetricsRow],
    cluster_sets: &HashMap<QueryId, ClusterSet>,
    manifest: &IvfManifest,
    capacity: usize,
    policy: CachePolicy,
) -> Result<()> {
    let mut cache = OracleCache::new(capacity, policy);
    let mut log = Vec::new();
    let lookup = |q: QueryId| {
        cluster_sets
            .get(&q)
            .ok_or_else(|| Error::Divergence(format!("query {q} has no cluster set")))
    };
    let facts = |id: ClusterId| -> Result<(f64, u64)> {
        Ok((manifest.profiled_cost(id)?, manifest.entry(id)?.byte_size))
    };

    for (i, row) in rows.iter().enumerate() {
        let set = lookup(row.query_id)?;
        let mut hits = 0u32;
        let mut misses = Vec::new();
        for id in set.iter() {
            log.clear();
            cache.apply(&CacheOp::Get(id), &mut log);
            match log[0] {
                CacheEvent::Hit(_) => hits += 1,
                _ => misses.push(id),
            }
        }
        let mut bytes = 0u64;
        for &id in &misses {
            let (cost, size) = facts(id)?;
            cache.apply(&CacheOp::Insert { id, cost_us: cost }, &mut log);
            bytes += size;
        }
        if row.prefetch_triggered {
            let next = rows.get(i + 1).ok_or_else(|| {
                Error::Divergence(format!("query {} prefetches past the last row", row.query_id))
            })?;
            let mut items = Vec::new();
            for id in lookup(next.query_id)?.iter() {
                items.push((id, facts(id)?.0));
            }
            log.clear();
            cache.apply(&CacheOp::Prefetch(items), &mut log);
            for e in &log {
                if let CacheEvent::Load(id) = e {
                    bytes += facts(*id)?.1;
                }
            }
        }

        let expected = (set.len() as u32, hits, misses.len() as u32, bytes);
        let found = (row.clusters_requested, row.cache_hits, row.demand_misses, row.bytes_read);
        if expected != found {
            return Err(Error::Divergence(format!(
                "{} query {} (row {i}): expected (requested, hits, misses, bytes) = {expected:?}, csv has {found:?}",
                row.mode, row.query_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_examples() {
        assert_eq!(oracle_jaccard(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(oracle_jaccard(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(oracle_jaccard(&[1, 3, 5, 7, 9], &[3, 5, 7, 11, 13]).unwrap(), 3.0 / 7.0);
        assert!(oracle_jaccard(&[], &[]).is_err());
    }

    #[test]
    fn knn_whole_corpus_when_k_large() {
        let corpus = vec![
            VectorRecord::new(5, vec![2.0]),
            VectorRecord::new(1, vec![-1.0]),
            VectorRecord::new(3, vec![1.0]),
        ];
        let hits = oracle_knn(&[0.0], &corpus, 10).unwrap();
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![1, 3, 5]);
    }

    proptest::proptest! {
        #[test]
        fn knn_agrees_with_top_k(
            rows in proptest::collection::vec(proptest::collection::vec(-4i8..4, 3), 1..40),
            q in proptest::collection::vec(-4i8..4, 3),
            k in 1usize..12,
        ) {
            // small integer grids make exact distance ties common
            let corpus: Vec<VectorRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| VectorRecord::new(i as u64 * 7 % 41, r.iter().map(|&x| x as f32).collect()))
                .collect();
            let q: Vec<f32> = q.iter().map(|&x| x as f32).collect();
            proptest::prop_assert_eq!(
                oracle_knn(&q, &corpus, k).unwrap(),
                crate::vector::top_k(&q, &corpus, k).unwrap()
            );
        }
    }

    #[test]
    fn capacity_one_by_hand() {
        let ops = [
            CacheOp::Get(1),
            CacheOp::Insert { id: 1, cost_us: 1.0 },
            CacheOp::Get(1),
            CacheOp::Insert { id: 2, cost_us: 1.0 },
            CacheOp::Get(1),
        ];
        for policy in [CachePolicy::Lru, CachePolicy::CostAware] {
            let out = oracle_cache_sim(&ops, 1, policy);
            use CacheEvent::*;
            assert_eq!(out.log, vec![Miss(1), Load(1), Hit(1), Evict(1), Load(2), Miss(1)]);
            assert_eq!(out.resident, vec![2]);
        }
    }

    /// Capacity 5 and four queries of five clusters each; queries 1 and 3
    /// share their clusters, as do 2 and 4.
    #[test]
    fn five_entry_walkthrough() {
        let q: [&[ClusterId]; 4] = [&[1, 3, 5, 7, 9], &[2, 4, 6, 8, 10], &[1, 3, 5, 7, 9], &[2, 4, 6, 8, 10]];
        // misses per query for a dispatch order, optionally prefetching the
        // third query's clusters after the second
        let run = |order: [usize; 4], prefetch: bool| {
            let mut cache = OracleCache::new(5, CachePolicy::Lru);
            let mut log = Vec::new();
            let mut per_query = Vec::new();
            for (pos, &qi) in order.iter().enumerate() {
                log.clear();
                for &c in q[qi] {
                    cache.apply(&CacheOp::Get(c), &mut log);
                }
                let missed: Vec<ClusterId> = log
                    .iter()
                    .filter_map(|e| match e {
                        CacheEvent::Miss(c) => Some(*c),
                        _ => None,
                    })
                    .collect();
                for &c in &missed {
                    cache.apply(&CacheOp::Insert { id: c, cost_us: 1.0 }, &mut log);
                }
                per_query.push(missed.len());
                if prefetch && pos == 1 {
                    let items = q[order[2]].iter().map(|&c| (c, 1.0)).collect();
                    cache.apply(&CacheOp::Prefetch(items), &mut log);
                }
            }
            per_query
        };
        // arrival order: five misses on every query
        assert_eq!(run([0, 1, 2, 3], false), vec![5, 5, 5, 5]);
        // grouped order 1,3,2,4: query 3 needs no disk access
        assert_eq!(run([0, 2, 1, 3], false), vec![5, 0, 5, 0]);
        // prefetch at the group switch: query 2 is served from cache
        assert_eq!(run([0, 2, 1, 3], true), vec![5, 0, 0, 0]);
    }
}
