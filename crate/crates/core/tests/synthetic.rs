use std::collections::{BTreeMap, BTreeSet};

use gcd_loop::{kmeans, KMeansParams, SyntheticConfig};

/// Accuracy without an assignment solver: when every cluster's majority label is distinct,
/// the majority mapping is the optimal one-to-one matching.
fn majority_accuracy(pred: &[usize], truth: &[usize]) -> Option<f64> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *counts.entry(p).or_default().entry(t).or_default() += 1;
    }
    let majors: Vec<(usize, usize)> = counts
        .values()
        .map(|c| c.iter().map(|(&l, &n)| (n, l)).max().unwrap())
        .collect();
    let distinct: BTreeSet<usize> = majors.iter().map(|m| m.1).collect();
    (distinct.len() == majors.len()).then(|| majors.iter().map(|m| m.0).sum::<usize>() as f64 / pred.len() as f64)
}

// Checks the generator, so it uses the stronger greedy seeding: classic k-means++ often
// merges two of the 20 blobs and splits a third at this separation.
#[test]
fn well_separated_categories_are_recovered() {
    for seed in 0..5 {
        let syn = SyntheticConfig {
            separation: 10.0,
            noise_sigma: 0.5,
            noise_rank: None,
            outlier_fraction: 0.0,
            seed,
            ..SyntheticConfig::default()
        };
        let samples = syn.generate().unwrap();
        let x = ndarray::Array2::from_shape_fn((samples.len(), syn.dim), |(i, j)| samples[i].vector[j]);
        let truth: Vec<usize> = samples.iter().map(|s| s.true_label.unwrap()).collect();
        let model = kmeans(x.view(), &KMeansParams::new(20, seed).greedy()).unwrap();
        let acc = majority_accuracy(&model.pseudo_labels, &truth).expect("one cluster per category");
        assert!(acc >= 0.99, "seed {seed}: accuracy {acc}");
    }
}
