use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in vector {id} at position {position}")]
    NonFinite { id: u64, position: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus has {corpus} vectors, fewer than nlist = {nlist}")]
    CorpusTooSmall { corpus: usize, nlist: usize },

    #[error("k-means left clusters {0:?} empty; corpus has too few distinct points")]
    DegenerateClusters(Vec<u32>),

    #[error("nprobe {nprobe} out of range 1..={nlist}")]
    NprobeOutOfRange { nprobe: usize, nlist: usize },

    #[error("cluster {0} is not in the manifest")]
    UnknownCluster(u32),

    #[error("cluster file {path} not found")]
    ClusterMissing { path: PathBuf },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path} is truncated: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: header names cluster {found}, expected {expected}")]
    ClusterIdMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("malformed vector file {path} at byte offset {offset}: {reason}")]
    MalformedVectors {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("failed to read cluster {cluster_id}: {source}")]
    ClusterRead {
        cluster_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("failed to profile clusters {0:?}")]
    ProfileFailed(Vec<u32>),

    #[error("both cluster sets are empty")]
    EmptySets,

    #[error("batch of {size} queries exceeds the ceiling of {ceiling}")]
    BatchTooLarge { size: usize, ceiling: usize },

    #[error("no request for query {0}")]
    MissingRequest(u64),

    #[error("workload generation failed: {0}")]
    Generation(String),

    #[error("replay verification failed: {0}")]
    Divergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
