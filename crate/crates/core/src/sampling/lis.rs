//! Local inconsistency, Student-t soft assignment, entropy and the top-m intersection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use ndarray::{ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::NeighborIndex;
use crate::error::{invalid, Error, Result};
use crate::scalar::{sq_dist, Scalar};

/// Number of neighbours whose pseudo label differs from the owner's.
pub fn local_inconsistency<F: Scalar>(pseudo_labels: &[usize], index: &NeighborIndex<F>) -> Vec<usize> {
    index
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            nbrs.iter()
                .filter(|&&j| pseudo_labels[j] != pseudo_labels[i])
                .count()
        })
        .collect()
}

/// Normalised Student-t kernel `(1 + ‖z − μ_j‖² / α)^{−(α+1)/2}` over the centers.
pub fn soft_assign<F: Scalar>(z: &[F], centers: ArrayView2<F>, alpha: F) -> Result<Vec<F>> {
    if !(alpha > F::zero()) || !alpha.is_finite() {
        return invalid("alpha must be a positive finite number");
    }
    if centers.nrows() == 0 || centers.ncols() != z.len() {
        return invalid("soft_assign: centers must be K × d with K >= 1");
    }
    if z.iter().any(|v| !v.is_finite()) || centers.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("soft_assign on non-finite input".into()));
    }
    let expo = -(alpha + F::one()) / (F::of(2.0));
    let logk: Vec<F> = centers
        .outer_iter()
        .map(|c| {
            let d2 = match c.as_slice() {
                Some(s) => sq_dist(s, z),
                None => sq_dist(&c.to_vec(), z),
            };
            expo * (d2 / alpha).ln_1p()
        })
        .collect();
    let max = logk.iter().copied().fold(F::neg_infinity(), F::max);
    let w: Vec<F> = logk.iter().map(|&l| (l - max).exp()).collect();
    let total: F = w.iter().copied().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Natural-log entropy; `0 · ln 0` counts as zero.
pub fn entropy<F: Scalar>(q: &[F]) -> F {
    q.iter()
        .filter(|&&p| p > F::zero())
        .map(|&p| -p * p.ln())
        .sum()
}

/// Per-sample LIS scores over one embedding snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisScore<F> {
    pub c: Vec<usize>,
    pub h: Vec<F>,
    pub q: Vec<Vec<F>>,
}

impl<F: Scalar> LisScore<F> {
    pub fn compute(
        features: ArrayView2<F>,
        centers: ArrayView2<F>,
        pseudo_labels: &[usize],
        index: &NeighborIndex<F>,
        alpha: F,
    ) -> Result<Self> {
        let c = local_inconsistency(pseudo_labels, index);
        let features = features.as_standard_layout();
        let rows: Vec<&[F]> = features.outer_iter().map(|r| r.to_slice().unwrap()).collect();
        let q = rows
            .par_iter()
            .map(|z| soft_assign(z, centers, alpha))
            .collect::<Result<Vec<_>>>()?;
        let h = q.iter().map(|row| entropy(row)).collect();
        Ok(Self { c, h, q })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSet {
    pub ids: BTreeSet<usize>,
    pub m: usize,
}

impl SelectionSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn by_c_then_h<'a, F: Scalar>(c: &'a [usize], h: &'a [F]) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| {
        c[b].cmp(&c[a])
            .then(h[b].partial_cmp(&h[a]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    }
}

fn by_h_then_c<'a, F: Scalar>(c: &'a [usize], h: &'a [F]) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| {
        h[b].partial_cmp(&h[a])
            .unwrap_or(Ordering::Equal)
            .then(c[b].cmp(&c[a]))
            .then(a.cmp(&b))
    }
}

/// Eligible ids ranked by C and by H, each with the documented tie-breaks.
pub(crate) fn rankings<F: Scalar>(c: &[usize], h: &[F], eligible: &BTreeSet<usize>) -> (Vec<usize>, Vec<usize>) {
    let mut rc: Vec<usize> = eligible.iter().copied().collect();
    let mut rh = rc.clone();
    rc.sort_by(by_c_then_h(c, h));
    rh.sort_by(by_h_then_c(c, h));
    (rc, rh)
}

/// `S = top_m(C) ∩ top_m(H)` over the eligible ids. `|S|` may be smaller than `m`.
pub fn select<F: Scalar>(c: &[usize], h: &[F], m: usize, eligible: &BTreeSet<usize>) -> SelectionSet {
    let (rc, rh) = rankings(c, h, eligible);
    let top_c: BTreeSet<usize> = rc.into_iter().take(m).collect();
    let ids = rh.into_iter().take(m).filter(|id| top_c.contains(id)).collect();
    SelectionSet { ids, m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn index(neighbors: Vec<Vec<usize>>) -> NeighborIndex<f64> {
        let similarities = neighbors.iter().map(|l| vec![0.0; l.len()]).collect();
        NeighborIndex {
            k: neighbors[0].len(),
            neighbors,
            similarities,
        }
    }

    #[test]
    fn inconsistency_counts() {
        let idx = index(vec![vec![1, 2, 3, 4], vec![0, 2, 3, 4], vec![0, 1, 3, 4], vec![0, 1, 2, 4], vec![0, 1, 2, 3]]);
        assert_eq!(local_inconsistency(&[0, 0, 0, 0, 0], &idx)[0], 0);
        // owner 0, neighbour labels [0, 1, 0, 2]
        let c = local_inconsistency(&[0, 0, 1, 0, 2], &idx);
        assert_eq!(c[0], 2);
        let c = local_inconsistency(&[0, 1, 2, 3, 4], &idx);
        assert!(c.iter().all(|&v| v == 4));
    }

    #[test]
    fn soft_assign_examples() {
        let centers = array![[1.0f64, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let q = soft_assign(&[0.0, 0.0], centers.view(), 1.0).unwrap();
        assert!(q.iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let centers = array![[0.0f64, 0.0], [2.0, 0.0]];
        let q = soft_assign(&[0.0, 0.0], centers.view(), 1.0).unwrap();
        assert!((q[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((q[1] - 1.0 / 6.0).abs() < 1e-15);

        let one = array![[3.0, 4.0]];
        assert_eq!(soft_assign(&[0.0, 0.0], one.view(), 1.0).unwrap(), vec![1.0]);
        assert!(soft_assign(&[f64::NAN, 0.0], one.view(), 1.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.2; 5]) - 5f64.ln()).abs() < 1e-12);
        assert!((entropy(&[5.0f64 / 6.0, 1.0 / 6.0]) - 0.45056).abs() < 1e-5);
    }

    #[test]
    fn select_examples() {
        let eligible: BTreeSet<usize> = (0..4).collect();
        let s = select(&[3, 2, 1, 0], &[0.1, 0.9, 0.8, 0.2], 2, &eligible);
        assert_eq!(s.ids, BTreeSet::from([1]));

        let full = select(&[3, 2, 1, 0], &[0.1, 0.9, 0.8, 0.2], 4, &eligible);
        assert_eq!(full.ids, eligible);

        // top-2 by C = {1, 2}, top-2 by H = {3, 4}
        let eligible: BTreeSet<usize> = (0..5).collect();
        let s = select(&[0, 5, 5, 1, 1], &[0.0, 0.1, 0.1, 0.9, 0.9], 2, &eligible);
        assert!(s.is_empty());
    }

    #[test]
    fn select_respects_eligibility() {
        let eligible = BTreeSet::from([1, 3]);
        let s = select(&[9, 8, 7, 6], &[0.9, 0.8, 0.7, 0.6], 2, &eligible);
        assert_eq!(s.ids, eligible);
    }
}
