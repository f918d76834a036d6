#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use ivfq::ivf::{build_index, IvfManifest, DEFAULT_MAX_ITERS};
use ivfq::store::{profile_clusters, IoCostModel};
use ivfq::vector::VectorRecord;
use ivfq::workload::synthetic_corpus;

/// Builds and profiles (simulated) an index over `corpus` in `dir`.
pub fn index_over(corpus: &[VectorRecord], nlist: usize, seed: u64, dir: &Path) -> Arc<IvfManifest> {
    let mut manifest = build_index(corpus, nlist, seed, DEFAULT_MAX_ITERS, dir).unwrap();
    profile_clusters(&mut manifest, &IoCostModel::simulated(), 1).unwrap();
    Arc::new(manifest)
}

/// Gaussian-mixture index shaped like the default experiment: 100 clusters
/// over 20,000 vectors of dimension 16.
pub fn experiment_index(dir: &Path, seed: u64) -> Arc<IvfManifest> {
    let corpus = synthetic_corpus(20_000, 16, 1000, 0.15, seed).unwrap();
    index_over(&corpus, 100, seed, dir)
}

/// One-dimensional index with exactly one vector per cluster, placed at
/// `positions`; cluster ids follow the ascending order of the positions
/// only when the seeding happens to, so callers look ids up by position.
pub fn point_index(positions: &[f32], dir: &Path) -> Arc<IvfManifest> {
    let corpus: Vec<VectorRecord> = positions
        .iter()
        .enumerate()
        .map(|(i, &x)| VectorRecord::new(i as u64, vec![x]))
        .collect();
    index_over(&corpus, positions.len(), 0, dir)
}

/// Cluster id whose centroid sits at `x` in a `point_index`.
pub fn cluster_at(manifest: &IvfManifest, x: f32) -> u32 {
    manifest
        .centroids
        .iter()
        .find(|c| c.values[0] == x)
        .map(|c| c.cluster_id)
        .expect("no centroid at that position")
}
