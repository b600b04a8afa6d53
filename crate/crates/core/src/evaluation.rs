//! Hungarian alignment, clustering accuracy and the H-score.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Minimum-cost perfect assignment on a square matrix.
///
/// Returns `row -> column` and the total cost. Shortest augmenting path with
/// row/column potentials, `O(n³)`.
pub fn hungarian<F: Scalar>(cost: &Array2<F>) -> Result<(Vec<usize>, F)> {
    let (n, m) = cost.dim();
    if n != m {
        return invalid(format!("hungarian needs a square matrix, got {n}×{m}"));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return invalid("hungarian cost matrix has non-finite entries");
    }
    if n == 0 {
        return Ok((Vec::new(), F::zero()));
    }
    // 1-based with a virtual column 0.
    let inf = F::infinity();
    let mut u = vec![F::zero(); n + 1];
    let mut v = vec![F::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[[r, c]])
        .sum();
    Ok((assignment, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Cluster id → category id, for clusters matched to a real category.
    pub mapping: BTreeMap<usize, usize>,
    pub acc_known: Option<f64>,
    pub acc_novel: Option<f64>,
    pub h_score: Option<f64>,
    pub acc_overall: f64,
    pub n_known: usize,
    pub n_novel: usize,
}

/// Harmonic mean, zero when both parts are zero.
pub fn h_score(known: f64, novel: f64) -> f64 {
    if known + novel > 0.0 {
        2.0 * known * novel / (known + novel)
    } else {
        0.0
    }
}

/// Hungarian-aligned accuracy of `pred` against `truth`, broken down by known/novel truth.
///
/// The confusion matrix is zero-padded to a square, so surplus clusters match dummy
/// categories and contribute no correct mass.
pub fn evaluate(pred: &[usize], truth: &[usize], known: &BTreeSet<usize>) -> Result<EvalReport> {
    if pred.len() != truth.len() || pred.is_empty() {
        return invalid("pred and truth must be aligned and non-empty");
    }
    let clusters: Vec<usize> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let cats: Vec<usize> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let c_pos: BTreeMap<usize, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let t_pos: BTreeMap<usize, usize> = cats.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let n = clusters.len().max(cats.len());
    let mut counts = Array2::<f64>::zeros((n, n));
    for (&p, &t) in pred.iter().zip(truth) {
        counts[[c_pos[&p], t_pos[&t]]] += 1.0;
    }
    let cost = counts.mapv(|v| -v);
    let (assignment, _) = hungarian(&cost)?;
    let mut mapping = BTreeMap::new();
    for (r, &c) in assignment.iter().enumerate() {
        if r < clusters.len() && c < cats.len() {
            mapping.insert(clusters[r], cats[c]);
        }
    }
    let (mut hit_k, mut n_k, mut hit_n, mut n_n) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let hit = mapping.get(&p) == Some(&t);
        if known.contains(&t) {
            n_k += 1;
            hit_k += hit as usize;
        } else {
            n_n += 1;
            hit_n += hit as usize;
        }
    }
    let acc_known = (n_k > 0).then(|| hit_k as f64 / n_k as f64);
    let acc_novel = (n_n > 0).then(|| hit_n as f64 / n_n as f64);
    let h = match (acc_known, acc_novel) {
        (Some(k), Some(v)) => Some(h_score(k, v)),
        _ => None,
    };
    Ok(EvalReport {
        mapping,
        acc_known,
        acc_novel,
        h_score: h,
        acc_overall: (hit_k + hit_n) as f64 / pred.len() as f64,
        n_known: n_k,
        n_novel: n_n,
    })
}

/// Fraction of `ids` whose pseudo label differs from the Hungarian-aligned cluster of
/// their true category.
pub fn wrong_cluster_rate(ids: &[usize], pseudo_labels: &[usize], truth: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Ok(0.0);
    }
    let cats: BTreeSet<usize> = truth.iter().copied().collect();
    let report = evaluate(pseudo_labels, truth, &cats)?;
    let wrong = ids
        .iter()
        .filter(|&&i| report.mapping.get(&pseudo_labels[i]) != Some(&truth[i]))
        .count();
    Ok(wrong as f64 / ids.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_optimum() {
        let cost = array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let (a, total) = hungarian(&cost).unwrap();
        assert_eq!(a, vec![0, 1, 2]);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn three_by_three_example() {
        let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        // exhaustive over the 6 permutations
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|r| cost[[r, p[r]]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, 5.0);
        let (a, total) = hungarian(&cost).unwrap();
        assert_eq!(a, vec![1, 0, 2]);
        assert_eq!(total, 5.0);
    }

    #[test]
    fn permutation_matrix_costs() {
        // cost 0 exactly where row r maps to column perm[r]
        let perm = [2, 0, 3, 1];
        let mut cost = Array2::from_elem((4, 4), 1.0);
        for (r, &c) in perm.iter().enumerate() {
            cost[[r, c]] = 0.0;
        }
        let (a, total) = hungarian(&cost).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(a, perm.to_vec());
    }

    #[test]
    fn rejects_non_square() {
        let cost = Array2::<f64>::zeros((2, 3));
        assert!(hungarian(&cost).is_err());
    }

    #[test]
    fn relabeled_prediction_is_perfect() {
        let truth = [0, 0, 1, 1, 2, 2, 3];
        let pred = [5, 5, 2, 2, 0, 0, 9];
        let r = evaluate(&pred, &truth, &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(r.acc_known, Some(1.0));
        assert_eq!(r.acc_novel, Some(1.0));
        assert_eq!(r.h_score, Some(1.0));
    }

    #[test]
    fn h_score_values() {
        assert!((h_score(0.8399, 0.6710) - 0.7460).abs() < 5e-5);
        assert_eq!(h_score(0.9, 0.0), 0.0);
        assert_eq!(h_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn missing_partition_is_absent() {
        let r = evaluate(&[0, 1], &[0, 1], &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(r.acc_novel, None);
        assert_eq!(r.h_score, None);
    }

    #[test]
    fn over_clustering_pads() {
        let truth = [0, 0, 0, 0, 1, 1];
        let pred = [0, 0, 2, 2, 1, 1];
        let r = evaluate(&pred, &truth, &BTreeSet::from([0])).unwrap();
        assert_eq!(r.acc_known, Some(0.5));
        assert_eq!(r.acc_novel, Some(1.0));
        assert_eq!(r.mapping.len(), 2);
    }
}
