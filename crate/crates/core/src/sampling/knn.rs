//! Exact cosine-similarity nearest neighbours.

use std::cmp::Ordering;

use log::warn;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{dot, Scalar};

/// `aᵀb / (‖a‖·‖b‖)`.
pub fn cosine_sim<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return invalid("cosine_sim on vectors of different length");
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if !(na > F::zero()) || !(nb > F::zero()) {
        return invalid("cosine_sim of a zero-norm vector");
    }
    Ok((dot(a, b) / (na * nb)).max(-F::one()).min(F::one()))
}

/// Per-sample neighbour lists, self excluded, sorted by descending similarity
/// with ascending id breaking ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex<F> {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
    pub similarities: Vec<Vec<F>>,
}

impl<F: Scalar> NeighborIndex<F> {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

fn rank_order<F: Scalar>(a: &(F, usize), b: &(F, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Brute-force top-k by cosine similarity. `k >= N` is clamped to `N - 1`.
pub fn build_knn<F: Scalar>(data: ArrayView2<F>, k: usize) -> Result<NeighborIndex<F>> {
    let n = data.nrows();
    if n < 2 {
        return invalid("kNN needs at least two samples");
    }
    if k == 0 {
        return invalid("k must be >= 1");
    }
    let k = if k >= n {
        warn!("k = {k} >= N = {n}; clamping to {}", n - 1);
        n - 1
    } else {
        k
    };
    let mut unit = data.to_owned();
    for (i, mut row) in unit.outer_iter_mut().enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if !(norm > F::zero()) || !norm.is_finite() {
            return Err(Error::Numeric(format!("sample {i} has zero or non-finite norm")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    let rows: Vec<&[F]> = unit.outer_iter().map(|r| r.to_slice().unwrap()).collect();
    let lists: Vec<(Vec<usize>, Vec<F>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(F, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dot(rows[i], rows[j]).min(F::one()), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, rank_order);
                cand.truncate(k);
            }
            cand.sort_by(rank_order);
            cand.into_iter().map(|(s, j)| (j, s)).unzip()
        })
        .collect();
    let (neighbors, similarities) = lists.into_iter().unzip();
    Ok(NeighborIndex {
        k,
        neighbors,
        similarities,
    })
}
