//! Lloyd's k-means with k-means++ seeding, and cluster-count estimation.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Seeding candidates drawn per center: 1 is classic k-means++; more is the greedy
    /// variant keeping the candidate that lowers the potential most.
    pub local_trials: usize,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-6,
            seed,
            local_trials: 1,
        }
    }

    /// Greedy seeding with the customary `2 + ⌊ln k⌋` candidates per center.
    pub fn greedy(mut self) -> Self {
        self.local_trials = 2 + (self.k as f64).ln().floor() as usize;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<F> {
    pub k: usize,
    /// `k × d` center matrix.
    pub centers: Array2<F>,
    pub pseudo_labels: Vec<usize>,
    pub inertia: F,
    /// Inertia after every assignment step, initial one included.
    pub inertia_trace: Vec<F>,
}

impl<F: Scalar> ClusterModel<F> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.pseudo_labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Index of the nearest center (lowest index on ties).
    pub fn nearest(&self, point: &[F]) -> usize {
        nearest_center(self.centers.view(), point).0
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.pseudo_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn nearest_center<F: Scalar>(centers: ArrayView2<F>, point: &[F]) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (j, c) in centers.outer_iter().enumerate() {
        let d = sq_dist(c.as_slice().expect("contiguous center row"), point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign<F: Scalar>(data: ArrayView2<F>, centers: ArrayView2<F>) -> (Vec<usize>, Vec<F>) {
    let rows: Vec<&[F]> = data
        .outer_iter()
        .map(|r| r.to_slice().expect("contiguous data row"))
        .collect();
    rows.par_iter()
        .map(|row| nearest_center(centers, row))
        .unzip()
}

fn sample_by_weight<F: Scalar>(w: &[F], total: f64, rng: &mut ChaCha8Rng) -> usize {
    if !(total > 0.0) {
        return rng.random_range(0..w.len());
    }
    let mut target = rng.random::<f64>() * total;
    for (i, v) in w.iter().enumerate() {
        target -= v.as_f64();
        if target < 0.0 {
            return i;
        }
    }
    w.len() - 1
}

/// k-means++ seeding with `trials` D²-weighted candidates per center. Classic seeding
/// (`trials = 1`) misses whole categories surprisingly often on tight, widely separated
/// blobs in tens of dimensions; it also tends to spend surplus centers on outliers.
fn kmeans_pp<F: Scalar>(data: ArrayView2<F>, k: usize, trials: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    let n = data.nrows();
    let row = |i: usize| data.row(i).to_slice().unwrap();
    let trials = trials.max(1);
    let mut centers = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<F> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().map(|v| v.as_f64()).sum();
        let mut best: Option<(f64, usize, Vec<F>)> = None;
        for _ in 0..trials {
            let cand = sample_by_weight(&d2, total, rng);
            let next: Vec<F> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let d = sq_dist(row(i), row(cand));
                    if d < d2[i] {
                        d
                    } else {
                        d2[i]
                    }
                })
                .collect();
            let pot: f64 = next.iter().map(|v| v.as_f64()).sum();
            if best.as_ref().is_none_or(|b| pot < b.0) {
                best = Some((pot, cand, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        centers.row_mut(c).assign(&data.row(pick));
        d2 = next;
    }
    centers
}

/// Runs k-means on the rows of `data` (which must be in standard layout).
pub fn kmeans<F: Scalar>(data: ArrayView2<F>, params: &KMeansParams) -> Result<ClusterModel<F>> {
    let (n, d) = data.dim();
    let k = params.k;
    if d == 0 {
        return invalid("k-means input has zero dimensions");
    }
    if k == 0 || k > n {
        return invalid(format!("k = {k} must be in 1..={n}"));
    }
    if params.max_iter == 0 || !(params.tol >= 0.0) {
        return invalid("max_iter must be >= 1 and tol >= 0");
    }
    let data = data.as_standard_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = kmeans_pp(data.view(), k, params.local_trials, &mut rng);
    lloyd(data.view(), centers, params.max_iter, params.tol)
}

/// Lloyd iterations from the given initial centers.
pub fn lloyd<F: Scalar>(data: ArrayView2<F>, init: Array2<F>, max_iter: usize, tol: f64) -> Result<ClusterModel<F>> {
    let (n, d) = data.dim();
    let k = init.nrows();
    if k == 0 || k > n || init.ncols() != d {
        return invalid(format!("initial centers must be k × {d} with 1 <= k <= {n}"));
    }
    let data = data.as_standard_layout();
    let data = data.view();
    let mut centers = init.as_standard_layout().into_owned();
    let (mut labels, mut dists) = assign(data, centers.view());
    let mut trace = vec![dists.iter().copied().sum::<F>()];

    for _ in 0..max_iter {
        // Update: reduce in ascending sample order.
        let mut sums = Array2::<F>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut s = sums.row_mut(l);
            for (acc, &v) in s.iter_mut().zip(data.row(i)) {
                *acc += v;
            }
        }
        let mut next = centers.clone();
        for j in 0..k {
            if counts[j] > 0 {
                let inv = F::one() / F::of(counts[j] as f64);
                next.row_mut(j).assign(&(&sums.row(j) * inv));
            }
        }
        // Empty clusters move to the points farthest from their assigned centers.
        let mut far = dists.clone();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let (idx, dmax) = far
                .iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            if dmax > F::zero() {
                next.row_mut(j).assign(&data.row(idx));
                far[idx] = F::zero();
            }
        }
        let shift = centers
            .outer_iter()
            .zip(next.outer_iter())
            .map(|(a, b)| sq_dist(a.as_slice().unwrap(), b.as_slice().unwrap()).as_f64().sqrt())
            .fold(0.0, f64::max);
        centers = next;
        let (new_labels, new_dists) = assign(data, centers.view());
        trace.push(new_dists.iter().copied().sum::<F>());
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        if !changed || shift < tol {
            break;
        }
    }
    Ok(ClusterModel {
        k,
        centers,
        pseudo_labels: labels,
        inertia: *trace.last().unwrap(),
        inertia_trace: trace,
    })
}

/// Best of `restarts` seeded runs by final inertia (first run wins ties).
pub fn kmeans_best_of<F: Scalar>(
    data: ArrayView2<F>,
    params: &KMeansParams,
    restarts: usize,
) -> Result<ClusterModel<F>> {
    let mut best: Option<ClusterModel<F>> = None;
    for r in 0..restarts.max(1) {
        let seed = match r {
            0 => params.seed,
            _ => crate::util::derive_seed(params.seed, 0x6b6d, r as u64),
        };
        let m = kmeans(data, &KMeansParams { seed, ..params.clone() })?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Clusters at `k_max` and counts clusters holding at least `drop_factor · N / k_max` points.
pub fn estimate_k<F: Scalar>(
    data: ArrayView2<F>,
    k_max: usize,
    drop_factor: f64,
    seed: u64,
) -> Result<(usize, Vec<usize>)> {
    if !(drop_factor > 0.0 && drop_factor < 1.0) {
        return invalid("drop_factor must be in (0, 1)");
    }
    let n = data.nrows();
    if k_max == 0 || k_max > n {
        return invalid(format!("k_max = {k_max} must be in 1..={n}"));
    }
    let model = kmeans(data, &KMeansParams::new(k_max, seed))?;
    let sizes = model.cluster_sizes();
    let threshold = drop_factor * n as f64 / k_max as f64;
    let est = sizes.iter().filter(|&&s| s > 0 && s as f64 >= threshold).count();
    Ok((est.max(1), sizes))
}
