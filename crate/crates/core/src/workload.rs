//! Query workloads: the flat vector file format, synthetic corpora, batch
//! traces and the interleaved-pattern generator.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{jaccard, ClusterSet, QueryId};
use crate::ivf::{nearest_centroids, IvfManifest};
use crate::vector::{l2_sq_unchecked, VectorRecord};

pub const VECTORS_MAGIC: [u8; 4] = *b"CGQ1";
const VECTORS_HEADER_LEN: u64 = 12;

/// Writes `CGQ1 | count u32 | dimension u32 | count x dimension f32`, all
/// little-endian.
pub fn write_vectors(path: &Path, dimension: usize, vectors: &[Vec<f32>]) -> Result<()> {
    for v in vectors {
        crate::vector::check_dimension(dimension, v.len())?;
    }
    let count = u32::try_from(vectors.len())
        .map_err(|_| Error::InvalidArgument("too many vectors".into()))?;
    let mut buf = Vec::with_capacity(12 + vectors.len() * dimension * 4);
    buf.extend_from_slice(&VECTORS_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(dimension as u32).to_le_bytes());
    for v in vectors {
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a flat vector file, returning its dimension and vectors.
pub fn read_vectors(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |offset: u64, reason: String| Error::MalformedVectors {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    if bytes.is_empty() {
        return Err(malformed(0, "empty file".into()));
    }
    if bytes.len() < 4 || bytes[..4] != VECTORS_MAGIC {
        return Err(malformed(0, "bad magic".into()));
    }
    if (bytes.len() as u64) < VECTORS_HEADER_LEN {
        return Err(malformed(bytes.len() as u64, "truncated header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dimension = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if count == 0 {
        return Err(malformed(4, "file holds no vectors".into()));
    }
    if dimension == 0 {
        return Err(malformed(8, "dimension is zero".into()));
    }
    let expected = VECTORS_HEADER_LEN + count as u64 * dimension as u64 * 4;
    if bytes.len() as u64 != expected {
        let offset = (bytes.len() as u64).min(expected);
        return Err(malformed(
            offset,
            format!("expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut vectors = Vec::with_capacity(count);
    for (i, chunk) in bytes[VECTORS_HEADER_LEN as usize..]
        .chunks_exact(dimension * 4)
        .enumerate()
    {
        let v: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            let offset = VECTORS_HEADER_LEN + (i * dimension + j) as u64 * 4;
            return Err(malformed(offset, "non-finite value".into()));
        }
        vectors.push(v);
    }
    Ok((dimension, vectors))
}

/// Reads a flat vector file as a corpus with ids `0..count`.
pub fn read_corpus(path: &Path) -> Result<Vec<VectorRecord>> {
    let (_, vectors) = read_vectors(path)?;
    Ok(vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| VectorRecord::new(i as u64, v))
        .collect())
}

/// Gaussian-mixture corpus: `blobs` centres uniform in [-1, 1]^d, points
/// scattered around them with standard deviation `spread`.
pub fn synthetic_corpus(count: usize, dimension: usize, blobs: usize, spread: f32, seed: u64) -> Result<Vec<VectorRecord>> {
    if count == 0 || dimension == 0 || blobs == 0 {
        return Err(Error::InvalidArgument(
            "count, dimension and blobs must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f32>> = (0..blobs)
        .map(|_| (0..dimension).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0f32, spread)
        .map_err(|e| Error::InvalidArgument(format!("spread: {e}")))?;
    Ok((0..count)
        .map(|i| {
            let c = &centres[rng.random_range(0..blobs)];
            let values = c.iter().map(|x| x + noise.sample(&mut rng)).collect();
            VectorRecord::new(i as u64, values)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceQuery {
    pub query_id: QueryId,
    pub vector: Vec<f32>,
    /// Generating pattern, when the trace is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: u32,
    pub queries: Vec<TraceQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub dimension: usize,
    pub seed: u64,
    pub generator: String,
    /// Pattern anchors of a synthetic trace, indexed by pattern.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrace {
    pub metadata: TraceMetadata,
    pub batches: Vec<Batch>,
}

impl BatchTrace {
    pub fn queries(&self) -> impl Iterator<Item = &TraceQuery> {
        self.batches.iter().flat_map(|b| b.queries.iter())
    }

    pub fn query_count(&self) -> usize {
        self.batches.iter().map(|b| b.queries.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let trace: BatchTrace = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        trace.validate()?;
        Ok(trace)
    }

    /// Checks unique query ids, nonempty batches and uniform dimension.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for b in &self.batches {
            if b.queries.is_empty() {
                return Err(Error::InvalidArgument(format!("batch {} is empty", b.batch_id)));
            }
            for q in &b.queries {
                crate::vector::check_dimension(self.metadata.dimension, q.vector.len())?;
                if !seen.insert(q.query_id) {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate query id {}",
                        q.query_id
                    )));
                }
            }
        }
        if seen.is_empty() {
            return Err(Error::InvalidArgument("trace has no queries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchingConfig {
    pub min_batch: usize,
    pub max_batch: usize,
    pub seed: u64,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        Self {
            min_batch: 20,
            max_batch: 100,
            seed: 0,
        }
    }
}

impl BatchingConfig {
    fn validate(&self) -> Result<()> {
        if self.min_batch == 0 || self.min_batch > self.max_batch {
            return Err(Error::InvalidArgument(format!(
                "invalid batch range [{}, {}]",
                self.min_batch, self.max_batch
            )));
        }
        Ok(())
    }
}

/// Seeded batch sizes covering `total` queries. Every size lies in
/// `[min, max]` unless `total` itself is below `min`.
pub fn batch_sizes(total: usize, config: &BatchingConfig, rng: &mut impl Rng) -> Vec<usize> {
    let (min, max) = (config.min_batch, config.max_batch);
    let mut sizes = Vec::new();
    let mut remaining = total;
    while remaining > 0 {
        if remaining <= max && (remaining < 2 * min || remaining - min < min) {
            sizes.push(remaining);
            break;
        }
        let mut s = rng.random_range(min..=max).min(remaining);
        if remaining - s < min {
            // leave at least a full minimum batch behind
            s = remaining - min;
        }
        sizes.push(s);
        remaining -= s;
    }
    sizes
}

/// Reads a flat vector file of queries and chunks it into batches.
pub fn ingest_trace(path: &Path, batching: &BatchingConfig, manifest: &IvfManifest) -> Result<BatchTrace> {
    batching.validate()?;
    let (dimension, vectors) = read_vectors(path)?;
    if dimension != manifest.dimension {
        return Err(Error::DimensionMismatch {
            expected: manifest.dimension,
            actual: dimension,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(batching.seed);
    let sizes = batch_sizes(vectors.len(), batching, &mut rng);
    let mut it = vectors.into_iter().enumerate();
    let batches = sizes
        .iter()
        .enumerate()
        .map(|(b, &n)| Batch {
            batch_id: b as u32,
            queries: it
                .by_ref()
                .take(n)
                .map(|(i, vector)| TraceQuery {
                    query_id: i as QueryId,
                    vector,
                    pattern: None,
                })
                .collect(),
        })
        .collect();
    Ok(BatchTrace {
        metadata: TraceMetadata {
            dimension,
            seed: batching.seed,
            generator: format!(
                "ingest {} batch=[{},{}]",
                path.display(),
                batching.min_batch,
                batching.max_batch
            ),
            anchors: Vec::new(),
        },
        batches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    /// Query `j` belongs to pattern `j mod n_patterns`.
    Roundrobin,
    /// Seeded random pattern, never the same as the previous query's.
    Shuffled,
}

impl std::str::FromStr for Interleave {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roundrobin" => Ok(Interleave::Roundrobin),
            "shuffled" => Ok(Interleave::Shuffled),
            other => Err(Error::InvalidArgument(format!("unknown interleave {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_batches: usize,
    pub batching: BatchingConfig,
    pub n_patterns: usize,
    /// Minimum fraction of the anchor's clusters every query must share.
    pub pattern_overlap: f64,
    pub interleave: Interleave,
    /// Noise norm relative to the distance from the anchor to its
    /// `nprobe`-th nearest centroid.
    pub noise: f64,
    pub nprobe: usize,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_batches: 10,
            batching: BatchingConfig::default(),
            n_patterns: 5,
            pattern_overlap: 0.8,
            interleave: Interleave::Roundrobin,
            noise: 0.3,
            nprobe: 10,
            max_retries: 64,
            seed: 0,
        }
    }
}

struct Pattern {
    anchor: Vec<f32>,
    clusters: ClusterSet,
    /// Per-dimension noise standard deviation.
    sigma: f32,
}

/// Overlap of `set` with the anchor's clusters, as a fraction of the latter.
pub fn anchor_overlap(set: &ClusterSet, anchor: &ClusterSet) -> f64 {
    set.intersection_len(anchor) as f64 / anchor.len() as f64
}

/// Builds `n_patterns` anchors at centroids whose probe sets overlap as
/// little as possible, then emits noisy copies of the anchors in an order
/// where adjacent queries come from different patterns.
pub fn generate_synthetic(config: &SyntheticConfig, manifest: &IvfManifest) -> Result<BatchTrace> {
    config.batching.validate()?;
    if config.n_patterns == 0 || config.n_batches == 0 {
        return Err(Error::InvalidArgument(
            "n_patterns and n_batches must be positive".into(),
        ));
    }
    if config.n_patterns > manifest.nlist {
        return Err(Error::InvalidArgument(format!(
            "{} patterns need at least as many clusters (nlist = {})",
            config.n_patterns, manifest.nlist
        )));
    }
    if !(0.0..=1.0).contains(&config.pattern_overlap) || config.noise.is_nan() || config.noise < 0.0 {
        return Err(Error::InvalidArgument(
            "pattern_overlap must be in [0, 1] and noise >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let patterns = choose_patterns(config, manifest, &mut rng)?;

    let sizes: Vec<usize> = (0..config.n_batches)
        .map(|_| rng.random_range(config.batching.min_batch..=config.batching.max_batch))
        .collect();

    let mut batches = Vec::with_capacity(sizes.len());
    let mut next_id: QueryId = 0;
    let mut previous: Option<usize> = None;
    for (b, &n) in sizes.iter().enumerate() {
        let mut queries = Vec::with_capacity(n);
        for _ in 0..n {
            let p = match config.interleave {
                Interleave::Roundrobin => next_id as usize % patterns.len(),
                Interleave::Shuffled => {
                    let mut p = rng.random_range(0..patterns.len());
                    if patterns.len() > 1 && Some(p) == previous {
                        p = (p + 1 + rng.random_range(0..patterns.len() - 1)) % patterns.len();
                    }
                    p
                }
            };
            previous = Some(p);
            let vector = noisy_query(&patterns[p], p, config, manifest, &mut rng)?;
            queries.push(TraceQuery {
                query_id: next_id,
                vector,
                pattern: Some(p as u32),
            });
            next_id += 1;
        }
        batches.push(Batch {
            batch_id: b as u32,
            queries,
        });
    }

    Ok(BatchTrace {
        metadata: TraceMetadata {
            dimension: manifest.dimension,
            seed: config.seed,
            generator: format!(
                "synthetic patterns={} overlap={} interleave={:?} noise={} nprobe={} batch=[{},{}] batches={}",
                config.n_patterns,
                config.pattern_overlap,
                config.interleave,
                config.noise,
                config.nprobe,
                config.batching.min_batch,
                config.batching.max_batch,
                config.n_batches
            ),
            anchors: patterns.iter().map(|p| p.anchor.clone()).collect(),
        },
        batches,
    })
}

fn choose_patterns(config: &SyntheticConfig, manifest: &IvfManifest, rng: &mut ChaCha8Rng) -> Result<Vec<Pattern>> {
    let mut order: Vec<usize> = (0..manifest.nlist).collect();
    order.shuffle(rng);
    let candidates: Vec<(usize, ClusterSet)> = order
        .into_iter()
        .map(|c| {
            nearest_centroids(&manifest.centroids[c].values, manifest, config.nprobe).map(|s| (c, s))
        })
        .collect::<Result<_>>()?;

    // Greedy: take the candidate with the smallest worst-case overlap
    // against the anchors chosen so far, first in shuffled order on ties.
    let mut chosen: Vec<(usize, ClusterSet)> = Vec::new();
    let mut used = vec![false; candidates.len()];
    while chosen.len() < config.n_patterns {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, set)) in candidates.iter().enumerate() {
            if used[i] {
                continue;
            }
            let mut worst = 0.0f64;
            for (_, other) in &chosen {
                worst = worst.max(jaccard(set, other)?);
            }
            if best.is_none_or(|(_, w)| worst < w) {
                best = Some((i, worst));
            }
        }
        let (i, _) = best.expect("n_patterns <= nlist");
        used[i] = true;
        chosen.push(candidates[i].clone());
    }

    let dim = manifest.dimension as f64;
    Ok(chosen
        .into_iter()
        .map(|(c, clusters)| {
            let anchor = manifest.centroids[c].values.clone();
            let radius = clusters
                .iter()
                .map(|id| l2_sq_unchecked(&anchor, &manifest.centroids[id as usize].values))
                .fold(0.0f32, f32::max)
                .sqrt() as f64;
            Pattern {
                anchor,
                clusters,
                sigma: (config.noise * radius / dim.sqrt()) as f32,
            }
        })
        .collect())
}

fn noisy_query(
    pattern: &Pattern,
    index: usize,
    config: &SyntheticConfig,
    manifest: &IvfManifest,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let mut best = 0.0f64;
    for _ in 0..config.max_retries.max(1) {
        let v: Vec<f32> = pattern
            .anchor
            .iter()
            .map(|x| {
                let z: f32 = StandardNormal.sample(rng);
                x + pattern.sigma * z
            })
            .collect();
        let set = nearest_centroids(&v, manifest, config.nprobe)?;
        let overlap = anchor_overlap(&set, &pattern.clusters);
        if overlap >= config.pattern_overlap {
            return Ok(v);
        }
        best = best.max(overlap);
    }
    Err(Error::Generation(format!(
        "pattern {index}: best overlap {best:.3} after {} attempts is below {} (noise {}, sigma {})",
        config.max_retries.max(1),
        config.pattern_overlap,
        config.noise,
        pattern.sigma
    )))
}
