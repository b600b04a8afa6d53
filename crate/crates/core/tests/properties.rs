use std::collections::{BTreeMap, BTreeSet};

use gcd_loop::evaluation::{evaluate, hungarian};
use gcd_loop::interpretation::representatives;
use gcd_loop::sampling::{select, soft_assign};
use gcd_loop::{
    estimate_k, kmeans, lloyd, load_jsonl, make_gcd_split, ClusterModel, KMeansParams, Split, SyntheticConfig,
};
use ndarray::Array2;
use proptest::prelude::*;

fn small_synth(seed: u64, categories: usize, per: usize) -> SyntheticConfig {
    SyntheticConfig {
        num_categories: categories,
        per_category: per,
        dim: 6,
        separation: 4.0,
        noise_sigma: 1.0,
        noise_rank: None,
        outlier_fraction: 0.1,
        seed,
        ..SyntheticConfig::default()
    }
}

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), vals[..rows * cols].to_vec()).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Random orthogonal matrix by Gram-Schmidt on the given columns.
fn orthonormal(d: usize, raw: &[f64]) -> Option<Array2<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for c in 0..d {
        let mut v: Vec<f64> = (0..d).map(|r| raw[c * d + r]).collect();
        for u in &cols {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            return None;
        }
        cols.push(v.into_iter().map(|x| x / n).collect());
    }
    Some(Array2::from_shape_fn((d, d), |(r, c)| cols[c][r]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jsonl_round_trip(seed in 0u64..1000, labeled in 0.05f64..0.9) {
        let bundle = make_gcd_split(small_synth(seed, 4, 12).generate().unwrap(), 0.25, labeled, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        bundle.write_jsonl(&path).unwrap();
        let back = load_jsonl(&path).unwrap();
        prop_assert_eq!(back, bundle);
    }

    #[test]
    fn split_invariants(seed in 0u64..10_000, cats in 2usize..9, novel in 0.05f64..0.5, labeled in 0.01f64..0.99) {
        let samples = small_synth(seed, cats, 10).generate().unwrap();
        let non_test = samples.iter().filter(|s| s.split != Split::Test).count();
        let b = make_gcd_split(samples, novel, labeled, seed).unwrap();
        let n_lab = b.ids_with_split(Split::Labeled).len();
        let n_unl = b.ids_with_split(Split::Unlabeled).len();
        prop_assert_eq!(n_lab + n_unl, non_test);
        prop_assert!(b.known_categories.is_disjoint(&b.novel_categories));
        prop_assert!(!b.known_categories.is_empty() && !b.novel_categories.is_empty());
        for s in b.samples.iter().filter(|s| s.split == Split::Labeled) {
            let l = s.true_label.unwrap();
            prop_assert!(b.known_categories.contains(&l));
        }
        let with_labels: BTreeSet<usize> =
            b.samples.iter().filter(|s| s.split == Split::Labeled).filter_map(|s| s.true_label).collect();
        prop_assert_eq!(with_labels, b.known_categories.clone());
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in 0u64..10_000, k in 1usize..8) {
        let samples = small_synth(seed, 5, 20).generate().unwrap();
        let data = Array2::from_shape_fn((samples.len(), 6), |(i, j)| samples[i].vector[j]);
        let m = kmeans(data.view(), &KMeansParams::new(k, seed)).unwrap();
        for w in m.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", m.inertia_trace);
        }
    }

    #[test]
    fn lloyd_follows_row_permutation(seed in 0u64..10_000, k in 2usize..6, shift in 1usize..99) {
        let samples = small_synth(seed, 4, 25).generate().unwrap();
        let n = samples.len();
        let data = Array2::from_shape_fn((n, 6), |(i, j)| samples[i].vector[j]);
        let perm: Vec<usize> = (0..n).map(|i| (i * 37 + shift) % n).collect();
        prop_assume!(perm.iter().collect::<BTreeSet<_>>().len() == n);
        let permuted = Array2::from_shape_fn((n, 6), |(i, j)| data[[perm[i], j]]);
        let init = Array2::from_shape_fn((k, 6), |(c, j)| data[[c * 7, j]]);
        let a = lloyd(data.view(), init.clone(), 100, 0.0).unwrap();
        let b = lloyd(permuted.view(), init, 100, 0.0).unwrap();
        for (x, y) in a.centers.iter().zip(b.centers.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for i in 0..n {
            prop_assert_eq!(b.pseudo_labels[i], a.pseudo_labels[perm[i]]);
        }
    }

    #[test]
    fn estimate_k_monotone_in_drop_factor(seed in 0u64..10_000) {
        let samples = small_synth(seed, 6, 20).generate().unwrap();
        let data = Array2::from_shape_fn((samples.len(), 6), |(i, j)| samples[i].vector[j]);
        let mut last = usize::MAX;
        for f in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let (est, _) = estimate_k(data.view(), 12, f, seed).unwrap();
            prop_assert!(est <= last);
            last = est;
        }
    }

    #[test]
    fn soft_assign_rotation_invariant(
        d in 2usize..5, k in 1usize..6, alpha in 0.2f64..5.0,
        vals in prop::collection::vec(-3.0f64..3.0, 30),
        raw in prop::collection::vec(-1.0f64..1.0, 25),
    ) {
        let Some(r) = orthonormal(d, &raw) else { return Ok(()) };
        let z = ndarray::Array1::from(vals[..d].to_vec());
        let centers = matrix(k, d, &vals[d..]);
        let zr = r.dot(&z);
        let cr = centers.dot(&r.t());
        let q = soft_assign(z.as_slice().unwrap(), centers.view(), alpha).unwrap();
        let qr = soft_assign(zr.as_slice().unwrap(), cr.view(), alpha).unwrap();
        for (a, b) in q.iter().zip(&qr) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn select_ignores_supply_order(
        c in prop::collection::vec(0usize..6, 5..40),
        hs in prop::collection::vec(0.0f64..2.0, 40),
        m in 1usize..30,
        rot in 0usize..40,
    ) {
        let n = c.len();
        let h = &hs[..n];
        let all: BTreeSet<usize> = (0..n).collect();
        let base = select(&c, h, m, &all);
        // Supply the scores in a rotated order, then map ids back.
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let c2: Vec<usize> = order.iter().map(|&i| c[i]).collect();
        let h2: Vec<f64> = order.iter().map(|&i| h[i]).collect();
        let other = select(&c2, &h2, m, &all);
        let mapped: BTreeSet<usize> = other.ids.iter().map(|&j| order[j]).collect();
        // Ties on both scores are broken by id, which the reordering changes; compare
        // only when every (C, H) pair is unique.
        let distinct: BTreeSet<(usize, u64)> = c.iter().zip(h).map(|(&a, &b)| (a, b.to_bits())).collect();
        let unique_h: BTreeSet<u64> = h.iter().map(|v| v.to_bits()).collect();
        if distinct.len() == n && unique_h.len() == n {
            prop_assert_eq!(mapped, base.ids);
        }
    }

    #[test]
    fn evaluate_ignores_cluster_ids(
        truth in prop::collection::vec(0usize..5, 10..60),
        noise in prop::collection::vec(0usize..7, 60),
        shift in 1usize..50,
    ) {
        let n = truth.len();
        let pred: Vec<usize> = (0..n).map(|i| if noise[i] < 5 { truth[i] } else { noise[i] }).collect();
        let relabel: Vec<usize> = pred.iter().map(|&p| (p * 13 + shift) % 97 + 100).collect();
        let known: BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        let a = evaluate(&pred, &truth, &known).unwrap();
        let b = evaluate(&relabel, &truth, &known).unwrap();
        prop_assert_eq!(a.acc_known, b.acc_known);
        prop_assert_eq!(a.acc_novel, b.acc_novel);
        prop_assert_eq!(a.acc_overall, b.acc_overall);
        if let (Some(k), Some(v)) = (a.acc_known, a.acc_novel) {
            prop_assert!(a.acc_overall >= k.min(v) - 1e-12 && a.acc_overall <= k.max(v) + 1e-12);
        }
    }

    #[test]
    fn hungarian_matches_permutations(n in 1usize..6, vals in prop::collection::vec(-10.0f64..10.0, 36)) {
        let cost = matrix(n, n, &vals);
        let (assign, total) = hungarian(&cost).unwrap();
        let best = permutations(n)
            .iter()
            .map(|p| (0..n).map(|r| cost[[r, p[r]]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((total - best).abs() < 1e-9);
        prop_assert_eq!(assign.iter().collect::<BTreeSet<_>>().len(), n);
    }

    #[test]
    fn representatives_match_full_sort(
        pts in prop::collection::vec((-5i32..5, -5i32..5), 3..30),
        n in 1usize..6,
        rot in 0usize..30,
    ) {
        let k = 2;
        let npts = pts.len();
        let features = Array2::from_shape_fn((npts, 2), |(i, j)| if j == 0 { pts[i].0 as f64 } else { pts[i].1 as f64 });
        let labels: Vec<usize> = (0..npts).map(|i| i % k).collect();
        let model = ClusterModel {
            k,
            centers: ndarray::array![[0.5, 0.0], [-1.0, 1.0]],
            pseudo_labels: labels.clone(),
            inertia: 0.0,
            inertia_trace: vec![0.0],
        };
        let got = representatives(&model, 0, features.view(), n).unwrap();
        let mut members: Vec<(f64, usize)> = (0..npts)
            .filter(|&i| labels[i] == 0)
            .map(|i| ((pts[i].0 as f64 - 0.5).powi(2) + (pts[i].1 as f64).powi(2), i))
            .collect();
        members.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = members.iter().take(n).map(|m| m.1).collect();
        prop_assert_eq!(&got, &want);

        // Rotating the member storage order leaves the chosen set unchanged.
        let order: Vec<usize> = (0..npts).map(|i| (i + rot) % npts).collect();
        let f2 = Array2::from_shape_fn((npts, 2), |(i, j)| features[[order[i], j]]);
        let model2 = ClusterModel { pseudo_labels: order.iter().map(|&i| labels[i]).collect(), ..model };
        let got2: BTreeSet<usize> = representatives(&model2, 0, f2.view(), n).unwrap().into_iter().map(|j| order[j]).collect();
        let dist_of: BTreeMap<usize, f64> = members.iter().map(|m| (m.1, m.0)).collect();
        let mut d1: Vec<f64> = got.iter().map(|i| dist_of[i]).collect();
        let mut d2: Vec<f64> = got2.iter().map(|i| dist_of[i]).collect();
        d1.sort_by(f64::total_cmp);
        d2.sort_by(f64::total_cmp);
        prop_assert_eq!(d1, d2);
    }
}
