//! Dense vectors, squared L2 distance and exact top-k selection.
//!
//! Distances are squared Euclidean throughout. Summation runs in index order
//! with an `f32` accumulator so results are reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VectorId = u64;

/// An identified dense vector, the unit of corpus storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: VectorId,
    pub values: Vec<f32>,
}

impl VectorRecord {
    pub fn new(id: VectorId, values: Vec<f32>) -> Self {
        Self { id, values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Rejects NaN and infinite components.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(position) => Err(Error::NonFinite {
                id: self.id,
                position,
            }),
            None => Ok(()),
        }
    }
}

/// A search result: vector id plus its squared L2 distance to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub id: VectorId,
    pub distance: f32,
}

impl ScoredHit {
    /// Total order by `(distance, id)`.
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

impl Eq for ScoredHit {}

impl PartialOrd for ScoredHit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ScoredHit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_rank(other)
    }
}

pub fn check_dimension(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn l2_distance_sq(a: &[f32], b: &[f32]) -> Result<f32> {
    check_dimension(a.len(), b.len())?;
    Ok(l2_sq_unchecked(a, b))
}

#[inline]
pub(crate) fn l2_sq_unchecked(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Exact k nearest neighbours of `query` among `candidates`.
///
/// Output is sorted ascending by distance with ties broken by ascending id.
/// An empty candidate list yields an empty result.
pub fn top_k<'a, I>(query: &[f32], candidates: I, k: usize) -> Result<Vec<ScoredHit>>
where
    I: IntoIterator<Item = &'a VectorRecord>,
{
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    // Max-heap of the best k seen so far; the root is the current worst.
    let mut heap: BinaryHeap<ScoredHit> = BinaryHeap::with_capacity(k + 1);
    for record in candidates {
        check_dimension(query.len(), record.values.len())?;
        let hit = ScoredHit {
            id: record.id,
            distance: l2_sq_unchecked(query, &record.values),
        };
        if heap.len() < k {
            heap.push(hit);
        } else if let Some(worst) = heap.peek() {
            if hit < *worst {
                heap.pop();
                heap.push(hit);
            }
        }
    }
    Ok(heap.into_sorted_vec())
}
