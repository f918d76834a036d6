//! Disk-based IVF vector search with cluster-aware query grouping, a
//! cost-aware cluster cache and group-transition prefetching.

pub mod cache;
pub mod engine;
pub mod error;
pub mod grouping;
pub mod ivf;
pub mod oracle;
pub mod replay;
pub mod report;
pub mod store;
pub mod vector;
pub mod workload;

pub use cache::{CacheConfig, CachePolicy, ClusterCache};
pub use engine::{ExecMode, QueryMetrics, SearchEngine, SearchRequest};
pub use error::{Error, Result};
pub use grouping::{jaccard, plan_queries, ClusterSet, GroupPlan, GroupingConfig};
pub use ivf::{build_index, nearest_centroids, ClusterId, IvfManifest};
pub use replay::{replay, ReplayConfig, ReplayReport};
pub use report::{summarize, MetricsRow, Summary};
pub use store::{profile_clusters, IoCostModel, IoMode};
pub use vector::{l2_distance_sq, top_k, ScoredHit, VectorRecord};
pub use workload::{generate_synthetic, ingest_trace, BatchTrace, SyntheticConfig};
