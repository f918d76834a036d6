//! Cluster-set similarity, greedy query grouping and the group plan that
//! tells the engine what to prefetch when it moves to the next group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ivf::ClusterId;

pub type QueryId = u64;

/// Sorted, duplicate-free set of cluster ids a query visits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterSet(Vec<ClusterId>);

impl ClusterSet {
    pub fn from_ids(ids: impl IntoIterator<Item = ClusterId>) -> Self {
        let mut v: Vec<ClusterId> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn ids(&self) -> &[ClusterId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: ClusterId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = ClusterId> + '_ {
        self.0.iter().copied()
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

impl FromIterator<ClusterId> for ClusterSet {
    fn from_iter<T: IntoIterator<Item = ClusterId>>(iter: T) -> Self {
        Self::from_ids(iter)
    }
}

/// |a ∩ b| / |a ∪ b|.
pub fn jaccard(a: &ClusterSet, b: &ClusterSet) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptySets);
    }
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_BATCH_CEILING: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingConfig {
    /// Minimum Jaccard similarity to join a group. Values above 1 never
    /// match, so every query becomes its own group.
    pub theta: f64,
    /// Largest batch accepted by the quadratic grouping pass.
    pub batch_ceiling: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            batch_ceiling: DEFAULT_BATCH_CEILING,
        }
    }
}

impl GroupingConfig {
    pub fn with_theta(theta: f64) -> Self {
        Self {
            theta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "theta must be a finite value >= 0, got {}",
                self.theta
            )));
        }
        if self.batch_ceiling == 0 {
            return Err(Error::InvalidArgument("batch ceiling must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedQuery {
    pub query_id: QueryId,
    pub clusters: ClusterSet,
}

impl PlannedQuery {
    pub fn new(query_id: QueryId, clusters: ClusterSet) -> Self {
        Self { query_id, clusters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub group_id: u32,
    pub queries: Vec<PlannedQuery>,
}

/// A group plus the first query of the group dispatched after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedGroup {
    pub group: QueryGroup,
    pub next_first_query: Option<PlannedQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub groups: Vec<PlannedGroup>,
}

impl GroupPlan {
    /// Queries in dispatch order.
    pub fn dispatch_order(&self) -> impl Iterator<Item = &PlannedQuery> {
        self.groups.iter().flat_map(|g| g.group.queries.iter())
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.group.queries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Single greedy pass in arrival order. A query joins the first group (in
/// creation order) holding some member with similarity at least `theta`,
/// otherwise it opens a new group.
pub fn form_groups(queries: &[PlannedQuery], config: &GroupingConfig) -> Result<Vec<QueryGroup>> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if queries.len() > config.batch_ceiling {
        return Err(Error::BatchTooLarge {
            size: queries.len(),
            ceiling: config.batch_ceiling,
        });
    }
    if let Some(q) = queries.iter().find(|q| q.clusters.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "query {} has an empty cluster set",
            q.query_id
        )));
    }

    let mut groups: Vec<QueryGroup> = Vec::new();
    for q in queries {
        let mut joined = None;
        for (gi, g) in groups.iter().enumerate() {
            let mut best = 0.0f64;
            for member in &g.queries {
                best = best.max(jaccard(&q.clusters, &member.clusters)?);
            }
            if best >= config.theta {
                joined = Some(gi);
                break;
            }
        }
        match joined {
            Some(gi) => groups[gi].queries.push(q.clone()),
            None => groups.push(QueryGroup {
                group_id: groups.len() as u32,
                queries: vec![q.clone()],
            }),
        }
    }
    Ok(groups)
}

/// Attaches the next group's first query to every group but the last.
pub fn build_plan(groups: Vec<QueryGroup>) -> Result<GroupPlan> {
    if groups.is_empty() || groups.iter().any(|g| g.queries.is_empty()) {
        return Err(Error::InvalidArgument("plan needs nonempty groups".into()));
    }
    let firsts: Vec<PlannedQuery> = groups.iter().map(|g| g.queries[0].clone()).collect();
    let groups = groups
        .into_iter()
        .enumerate()
        .map(|(i, group)| PlannedGroup {
            group,
            next_first_query: firsts.get(i + 1).cloned(),
        })
        .collect();
    Ok(GroupPlan { groups })
}

pub fn plan_queries(batch: &[PlannedQuery], config: &GroupingConfig) -> Result<GroupPlan> {
    build_plan(form_groups(batch, config)?)
}

/// A plan that keeps arrival order in one group, used when grouping is off.
pub fn arrival_plan(batch: &[PlannedQuery]) -> Result<GroupPlan> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    build_plan(vec![QueryGroup {
        group_id: 0,
        queries: batch.to_vec(),
    }])
}
