//! First-level IVF index: seeded Lloyd's k-means, the cluster manifest and
//! nearest-centroid lookup.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::ClusterSet;
use crate::store::write_cluster;
use crate::vector::{check_dimension, l2_sq_unchecked, VectorRecord};

pub type ClusterId = u32;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_MAX_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub cluster_id: ClusterId,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    /// Relative to the manifest's directory.
    pub file_path: String,
    pub vector_count: u64,
    pub byte_size: u64,
    /// Median (real) or modelled (simulated) read cost; `None` until profiled.
    pub profiled_read_cost_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvfManifest {
    pub dimension: usize,
    pub nlist: usize,
    pub centroids: Vec<Centroid>,
    pub clusters: BTreeMap<ClusterId, ClusterEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl IvfManifest {
    /// Loads `manifest.json` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: IvfManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
        manifest.root = dir.to_path_buf();
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes `manifest.json` into the manifest's directory.
    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::json(&path, e))?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry(&self, cluster_id: ClusterId) -> Result<&ClusterEntry> {
        self.clusters
            .get(&cluster_id)
            .ok_or(Error::UnknownCluster(cluster_id))
    }

    pub fn cluster_path(&self, cluster_id: ClusterId) -> Result<PathBuf> {
        Ok(self.root.join(&self.entry(cluster_id)?.file_path))
    }

    pub fn total_vectors(&self) -> u64 {
        self.clusters.values().map(|c| c.vector_count).sum()
    }

    pub fn is_profiled(&self) -> bool {
        self.clusters
            .values()
            .all(|c| c.profiled_read_cost_us.is_some())
    }

    pub fn profiled_cost(&self, cluster_id: ClusterId) -> Result<f64> {
        self.entry(cluster_id)?
            .profiled_read_cost_us
            .ok_or_else(|| Error::InvalidArgument(format!("cluster {cluster_id} is not profiled")))
    }

    fn validate(&self) -> Result<()> {
        let dense = self.centroids.len() == self.nlist
            && self
                .centroids
                .iter()
                .enumerate()
                .all(|(i, c)| c.cluster_id as usize == i && c.values.len() == self.dimension)
            && self.clusters.len() == self.nlist
            && self.clusters.keys().enumerate().all(|(i, &id)| id as usize == i);
        if dense && self.nlist > 0 && self.dimension > 0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "manifest cluster ids are not dense 0..nlist".into(),
            ))
        }
    }
}

/// The `nprobe` clusters whose centroids are closest to `query`, ties broken
/// by ascending cluster id.
pub fn nearest_centroids(query: &[f32], manifest: &IvfManifest, nprobe: usize) -> Result<ClusterSet> {
    if nprobe == 0 || nprobe > manifest.nlist {
        return Err(Error::NprobeOutOfRange {
            nprobe,
            nlist: manifest.nlist,
        });
    }
    check_dimension(manifest.dimension, query.len())?;
    let mut scored: Vec<(f32, ClusterId)> = manifest
        .centroids
        .iter()
        .map(|c| (l2_sq_unchecked(query, &c.values), c.cluster_id))
        .collect();
    if nprobe < scored.len() {
        scored.select_nth_unstable_by(nprobe - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(nprobe);
    }
    Ok(ClusterSet::from_ids(scored.into_iter().map(|(_, id)| id)))
}

/// Partitions `corpus` with seeded k-means, writes one cluster file per
/// cluster into `out_dir` and saves the manifest there.
pub fn build_index(
    corpus: &[VectorRecord],
    nlist: usize,
    seed: u64,
    max_iters: usize,
    out_dir: &Path,
) -> Result<IvfManifest> {
    let (centroids, assignment) = kmeans(corpus, nlist, seed, max_iters)?;
    let dimension = corpus[0].dimension();

    let mut members: Vec<Vec<VectorRecord>> = vec![Vec::new(); nlist];
    for (record, &c) in corpus.iter().zip(&assignment) {
        members[c as usize].push(record.clone());
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut clusters = BTreeMap::new();
    for (id, records) in members.iter().enumerate() {
        let id = id as ClusterId;
        let file_path = format!("cluster_{id:05}.bin");
        let byte_size = write_cluster(id, records, &out_dir.join(&file_path))?;
        clusters.insert(
            id,
            ClusterEntry {
                file_path,
                vector_count: records.len() as u64,
                byte_size,
                profiled_read_cost_us: None,
            },
        );
    }

    let manifest = IvfManifest {
        dimension,
        nlist,
        centroids: centroids
            .into_iter()
            .enumerate()
            .map(|(i, values)| Centroid {
                cluster_id: i as ClusterId,
                values,
            })
            .collect(),
        clusters,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

/// Lloyd's k-means. Returns centroids and, for every corpus vector, the id of
/// its nearest centroid among the returned ones.
pub fn kmeans(
    corpus: &[VectorRecord],
    nlist: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Vec<Vec<f32>>, Vec<ClusterId>)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    if nlist == 0 {
        return Err(Error::InvalidArgument("nlist must be positive".into()));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    if corpus.len() < nlist {
        return Err(Error::CorpusTooSmall {
            corpus: corpus.len(),
            nlist,
        });
    }
    let dim = corpus[0].dimension();
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-dimensional vectors".into()));
    }
    for r in corpus {
        check_dimension(dim, r.dimension())?;
        r.check_finite()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f32>> = rand::seq::index::sample(&mut rng, corpus.len(), nlist)
        .into_iter()
        .map(|i| corpus[i].values.clone())
        .collect();

    let mut assignment = vec![ClusterId::MAX; corpus.len()];
    let mut iteration = 0;
    loop {
        let changed = assign(corpus, &centroids, &mut assignment);
        iteration += 1;
        if !changed || iteration >= max_iters {
            break;
        }
        update_centroids(corpus, &mut centroids, &mut assignment);
    }

    let mut counts = vec![0usize; nlist];
    for &c in &assignment {
        counts[c as usize] += 1;
    }
    let empty: Vec<ClusterId> = (0..nlist as ClusterId)
        .filter(|&c| counts[c as usize] == 0)
        .collect();
    if !empty.is_empty() {
        return Err(Error::DegenerateClusters(empty));
    }
    Ok((centroids, assignment))
}

fn nearest(values: &[f32], centroids: &[Vec<f32>]) -> ClusterId {
    let mut best = 0;
    let mut best_dist = f32::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = l2_sq_unchecked(values, c);
        if d < best_dist {
            best_dist = d;
            best = i;
        }
    }
    best as ClusterId
}

fn assign(corpus: &[VectorRecord], centroids: &[Vec<f32>], assignment: &mut [ClusterId]) -> bool {
    let mut changed = false;
    for (r, slot) in corpus.iter().zip(assignment.iter_mut()) {
        let c = nearest(&r.values, centroids);
        if *slot != c {
            *slot = c;
            changed = true;
        }
    }
    changed
}

/// Moves every centroid to the mean of its members. An empty cluster takes
/// over the point of the largest cluster that lies farthest from its centroid.
fn update_centroids(corpus: &[VectorRecord], centroids: &mut [Vec<f32>], assignment: &mut [ClusterId]) {
    let nlist = centroids.len();
    let dim = corpus[0].dimension();
    let mut sums = vec![vec![0f64; dim]; nlist];
    let mut counts = vec![0usize; nlist];
    for (r, &c) in corpus.iter().zip(assignment.iter()) {
        counts[c as usize] += 1;
        for (s, v) in sums[c as usize].iter_mut().zip(&r.values) {
            *s += *v as f64;
        }
    }
    for (c, (sum, &n)) in sums.iter().zip(&counts).enumerate() {
        if n > 0 {
            centroids[c] = sum.iter().map(|s| (s / n as f64) as f32).collect();
        }
    }

    for empty in 0..nlist {
        if counts[empty] != 0 {
            continue;
        }
        // largest cluster, lowest id on ties
        let largest = (0..nlist).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
        if counts[largest] < 2 {
            break;
        }
        let mut far = None;
        let mut far_dist = -1.0f32;
        for (i, r) in corpus.iter().enumerate() {
            if assignment[i] as usize == largest {
                let d = l2_sq_unchecked(&r.values, &centroids[largest]);
                if d > far_dist {
                    far_dist = d;
                    far = Some(i);
                }
            }
        }
        if let Some(i) = far {
            centroids[empty] = corpus[i].values.clone();
            assignment[i] = empty as ClusterId;
            counts[largest] -= 1;
            counts[empty] = 1;
        }
    }
}
