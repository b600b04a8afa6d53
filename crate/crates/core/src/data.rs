//! Datasets: JSONL I/O, synthetic generation and the known/novel split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

/// One data point. On disk this is one JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub id: usize,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    pub split: Split,
}

impl EmbeddedSample {
    /// Text used in prompts and cache keys. Samples without text get a stable surrogate.
    pub fn display_text(&self) -> String {
        match &self.text {
            Some(t) => t.clone(),
            None => format!("sample {}", self.id),
        }
    }
}

/// A validated dataset. Samples are stored in id order and `samples[i].id == i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub samples: Vec<EmbeddedSample>,
    pub known_categories: BTreeSet<usize>,
    pub novel_categories: BTreeSet<usize>,
    pub dim: usize,
}

impl DatasetBundle {
    /// Validates and assembles a bundle. Categories are derived from the split tags:
    /// labels carried by labeled samples are known, every other label is novel.
    pub fn from_samples(mut samples: Vec<EmbeddedSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        samples.sort_by_key(|s| s.id);
        let dim = samples[0].vector.len();
        if dim < 2 {
            return Err(Error::Data(format!("vector dimension {dim} < 2")));
        }
        for (pos, s) in samples.iter().enumerate() {
            if s.vector.len() != dim {
                return Err(Error::Data(format!(
                    "sample {} has dimension {}, expected {dim}",
                    s.id,
                    s.vector.len()
                )));
            }
            if s.id != pos {
                return Err(Error::Data(format!(
                    "sample ids must be unique and dense in 0..{}; found id {} at position {pos}",
                    samples.len(),
                    s.id
                )));
            }
            if s.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {} has a non-finite coordinate", s.id)));
            }
            if s.split == Split::Labeled && s.true_label.is_none() {
                return Err(Error::Data(format!("labeled sample {} has no label", s.id)));
            }
        }
        let known: BTreeSet<usize> = samples
            .iter()
            .filter(|s| s.split == Split::Labeled)
            .filter_map(|s| s.true_label)
            .collect();
        let novel: BTreeSet<usize> = samples
            .iter()
            .filter_map(|s| s.true_label)
            .filter(|l| !known.contains(l))
            .collect();
        if !samples.iter().any(|s| s.split != Split::Test) {
            return Err(Error::Data("no labeled or unlabeled samples".into()));
        }
        Ok(Self {
            samples,
            known_categories: known,
            novel_categories: novel,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ids of `D^all`, i.e. labeled and unlabeled samples.
    pub fn train_ids(&self) -> Vec<usize> {
        self.ids_where(|s| s.split != Split::Test)
    }

    pub fn ids_with_split(&self, split: Split) -> Vec<usize> {
        self.ids_where(|s| s.split == split)
    }

    fn ids_where(&self, f: impl Fn(&EmbeddedSample) -> bool) -> Vec<usize> {
        self.samples.iter().filter(|s| f(s)).map(|s| s.id).collect()
    }

    /// Total category count `K = |Y_k| + |Y_n|`.
    pub fn num_categories(&self) -> usize {
        self.known_categories.len() + self.novel_categories.len()
    }

    /// Row matrix of the given samples' input vectors, in the given order.
    pub fn matrix<F: Scalar>(&self, ids: &[usize]) -> Array2<F> {
        let mut m = Array2::zeros((ids.len(), self.dim));
        for (r, &id) in ids.iter().enumerate() {
            for (c, &v) in self.samples[id].vector.iter().enumerate() {
                m[[r, c]] = F::of(v);
            }
        }
        m
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    pub fn has_all_text(&self) -> bool {
        self.samples.iter().all(|s| s.text.is_some())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads one record per line. Line numbers in errors are 1-based.
pub fn load_jsonl(path: &Path) -> Result<DatasetBundle> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: EmbeddedSample =
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        match dim {
            None => dim = Some(sample.vector.len()),
            Some(d) if d != sample.vector.len() => {
                return Err(Error::DimensionMismatch {
                    line: line_no,
                    expected: d,
                    found: sample.vector.len(),
                })
            }
            _ => {}
        }
        if !seen.insert(sample.id) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        if sample.split == Split::Labeled && sample.true_label.is_none() {
            return Err(Error::MissingLabel {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    DatasetBundle::from_samples(samples)
}

/// Parameters of the desk-scale synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_categories: usize,
    pub per_category: usize,
    pub dim: usize,
    /// Radius of the sphere the category centers are drawn on.
    pub separation: f64,
    pub noise_sigma: f64,
    /// Confine each category's noise to its own random subspace of this rank;
    /// `None` is isotropic noise in all `dim` coordinates. Serialised as `0` when `None`,
    /// since TOML has no null.
    #[serde(with = "rank_or_zero")]
    pub noise_rank: Option<usize>,
    /// Share of samples that additionally get isotropic `outlier_sigma` noise.
    pub outlier_fraction: f64,
    pub outlier_sigma: f64,
    /// Rank of a shared subspace carrying class-independent noise; centers are drawn
    /// orthogonal to it.
    pub nuisance_rank: usize,
    pub nuisance_sigma: f64,
    /// Fraction of each category marked as test.
    pub test_fraction: f64,
    pub seed: u64,
}

mod rank_or_zero {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        Ok(Option::<usize>::deserialize(d)?.filter(|&r| r > 0))
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_categories: 20,
            per_category: 200,
            dim: 32,
            separation: 10.0,
            noise_sigma: 6.0,
            noise_rank: Some(8),
            outlier_fraction: 0.05,
            outlier_sigma: 10.0,
            nuisance_rank: 0,
            nuisance_sigma: 0.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// All splits are `unlabeled` except the test share; run [`make_gcd_split`] next.
    pub fn generate(&self) -> Result<Vec<EmbeddedSample>> {
        if self.num_categories < 2 || self.per_category < 2 {
            return invalid("synthetic data needs at least 2 categories and 2 samples each");
        }
        if !(self.separation > 0.0) || !(self.noise_sigma >= 0.0) {
            return invalid("separation must be > 0 and noise_sigma >= 0");
        }
        if self.dim < 2 {
            return invalid("dimension must be >= 2");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return invalid("test_fraction must be in [0, 1)");
        }
        if self.noise_rank.is_some_and(|r| r == 0 || r > self.dim) {
            return invalid("noise_rank must be in 1..=dim");
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) || !(self.outlier_sigma >= 0.0) {
            return invalid("outlier_fraction must be in [0, 1] and outlier_sigma >= 0");
        }
        if self.nuisance_rank >= self.dim || !(self.nuisance_sigma >= 0.0) {
            return invalid("nuisance_rank must be < dim and nuisance_sigma >= 0");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let nuisance = if self.nuisance_rank > 0 {
            random_orthonormal(self.dim, self.nuisance_rank, &mut rng)
        } else {
            Vec::new()
        };
        let centers: Vec<Vec<f64>> = (0..self.num_categories)
            .map(|_| {
                let mut g: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                for u in &nuisance {
                    let p: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
                    for (x, &b) in g.iter_mut().zip(u) {
                        *x -= p * b;
                    }
                }
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                g.iter().map(|v| v / norm * self.separation).collect()
            })
            .collect();
        let bases: Vec<Vec<Vec<f64>>> = match self.noise_rank {
            Some(r) => (0..self.num_categories)
                .map(|_| random_orthonormal(self.dim, r, &mut rng))
                .collect(),
            None => Vec::new(),
        };
        let n_test = (self.test_fraction * self.per_category as f64).round() as usize;
        let mut raw = Vec::with_capacity(self.num_categories * self.per_category);
        for (label, center) in centers.iter().enumerate() {
            for j in 0..self.per_category {
                let v: Vec<f64> = match bases.get(label) {
                    Some(basis) => {
                        let mut v = center.clone();
                        for u in basis {
                            let e: f64 = rng.sample(StandardNormal);
                            for (x, &b) in v.iter_mut().zip(u) {
                                *x += self.noise_sigma * e * b;
                            }
                        }
                        v
                    }
                    None => center
                        .iter()
                        .map(|&c| {
                            let e: f64 = rng.sample(StandardNormal);
                            c + self.noise_sigma * e
                        })
                        .collect(),
                };
                let mut v = v;
                for u in &nuisance {
                    let e: f64 = rng.sample(StandardNormal);
                    for (x, &b) in v.iter_mut().zip(u) {
                        *x += self.nuisance_sigma * e * b;
                    }
                }
                let v = if self.outlier_fraction > 0.0 && rng.random::<f64>() < self.outlier_fraction {
                    v.into_iter()
                        .map(|x| {
                            let e: f64 = rng.sample(StandardNormal);
                            x + self.outlier_sigma * e
                        })
                        .collect()
                } else {
                    v
                };
                let split = if j >= self.per_category - n_test {
                    Split::Test
                } else {
                    Split::Unlabeled
                };
                raw.push((label, v, split));
            }
        }
        raw.shuffle(&mut rng);
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(id, (label, vector, split))| EmbeddedSample {
                id,
                vector,
                text: None,
                true_label: Some(label),
                split,
            })
            .collect())
    }
}

/// `r` orthonormal vectors in `R^d` by Gram-Schmidt on Gaussian draws.
fn random_orthonormal(d: usize, r: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &basis {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, &b) in v.iter_mut().zip(u) {
                *x -= p * b;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Assigns known/novel categories and the labeled subset. Test samples pass through.
///
/// `ceil(novel_ratio * C)` categories become novel, chosen by a seeded shuffle of the
/// sorted category list. Each known category gets `max(1, ceil(labeled_ratio * n))` of
/// its non-test samples labeled.
pub fn make_gcd_split(
    samples: Vec<EmbeddedSample>,
    novel_ratio: f64,
    labeled_ratio: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if !(novel_ratio > 0.0 && novel_ratio < 1.0) {
        return invalid("novel_ratio must be in (0, 1)");
    }
    if !(labeled_ratio > 0.0 && labeled_ratio <= 1.0) {
        return invalid("labeled_ratio must be in (0, 1]");
    }
    let mut by_category: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, s) in samples.iter().enumerate() {
        let label = s
            .true_label
            .ok_or_else(|| Error::Data(format!("sample {} has no label", s.id)))?;
        let members = by_category.entry(label).or_default();
        if s.split != Split::Test {
            members.push(pos);
        }
    }
    if by_category.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 categories, found {}",
            by_category.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut categories: Vec<usize> = by_category.keys().copied().collect();
    categories.shuffle(&mut rng);
    let n_novel = (novel_ratio * categories.len() as f64 - 1e-9).ceil() as usize;
    if n_novel >= categories.len() {
        return Err(Error::Data("novel_ratio leaves no known category".into()));
    }
    let novel: BTreeSet<usize> = categories[..n_novel].iter().copied().collect();

    let mut samples = samples;
    for (&label, members) in &by_category {
        if novel.contains(&label) {
            for &pos in members {
                samples[pos].split = Split::Unlabeled;
            }
            continue;
        }
        if members.is_empty() {
            return Err(Error::Data(format!(
                "known category {label} has no non-test samples"
            )));
        }
        let mut order = members.clone();
        order.sort_by_key(|&p| samples[p].id);
        order.shuffle(&mut rng);
        let n_labeled = ((labeled_ratio * order.len() as f64 - 1e-9).ceil() as usize)
            .clamp(1, order.len());
        for (rank, &pos) in order.iter().enumerate() {
            samples[pos].split = if rank < n_labeled {
                Split::Labeled
            } else {
                Split::Unlabeled
            };
        }
    }
    let bundle = DatasetBundle::from_samples(samples)?;
    debug_assert!(bundle.novel_categories.is_superset(&novel));
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(cats: usize, per: usize) -> Vec<EmbeddedSample> {
        SyntheticConfig {
            num_categories: cats,
            per_category: per,
            dim: 4,
            noise_rank: None,
            ..Default::default()
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn load_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":0,"vector":[1,0,0,0],"label":0,"split":"labeled"}"#,
                "\n",
                r#"{"id":1,"vector":[0,1,0,0],"text":"hi","split":"unlabeled"}"#,
                "\n",
                r#"{"id":2,"vector":[0,0,1,0.5],"label":1,"split":"test"}"#,
                "\n"
            ),
        )
        .unwrap();
        let b = load_jsonl(&path).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.dim, 4);
        assert_eq!(b.known_categories, BTreeSet::from([0]));
        assert_eq!(b.novel_categories, BTreeSet::from([1]));
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"id\":0,\"vector\":[1,0,0,0],\"split\":\"unlabeled\"}\n{\"id\":1,\"vector\":[1,0,0],\"split\":\"unlabeled\"}\n",
        )
        .unwrap();
        match load_jsonl(&path) {
            Err(Error::DimensionMismatch { line, expected, found }) => {
                assert_eq!((line, expected, found), (2, 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labeled_without_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"id\":0,\"vector\":[1,0],\"split\":\"labeled\"}\n").unwrap();
        assert!(matches!(
            load_jsonl(&path),
            Err(Error::MissingLabel { line: 1, id: 0 })
        ));
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"id\":0,\"vector\":[1,0],\"split\":\"test\"}\nnot json\n").unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::Malformed { line: 2, .. })));
        std::fs::write(
            &path,
            "{\"id\":0,\"vector\":[1,0],\"split\":\"unlabeled\"}\n{\"id\":0,\"vector\":[1,1],\"split\":\"unlabeled\"}\n",
        )
        .unwrap();
        assert!(matches!(load_jsonl(&path), Err(Error::DuplicateId { line: 2, id: 0 })));
    }

    #[test]
    fn twenty_categories_split_fifteen_five() {
        let b = make_gcd_split(synth(20, 10), 0.25, 0.1, 3).unwrap();
        assert_eq!(b.novel_categories.len(), 5);
        assert_eq!(b.known_categories.len(), 15);
    }

    #[test]
    fn full_labeled_ratio_labels_everything_known() {
        let mut samples = synth(4, 4);
        for s in &mut samples {
            s.split = Split::Unlabeled;
        }
        let b = make_gcd_split(samples, 0.25, 1.0, 1).unwrap();
        for s in &b.samples {
            let known = b.known_categories.contains(&s.true_label.unwrap());
            assert_eq!(s.split == Split::Labeled, known);
        }
        assert_eq!(b.ids_with_split(Split::Labeled).len(), 12);
    }

    #[test]
    fn split_is_deterministic() {
        let a = make_gcd_split(synth(8, 20), 0.25, 0.1, 42).unwrap();
        let b = make_gcd_split(synth(8, 20), 0.25, 0.1, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_single_category() {
        let mut samples = synth(2, 4);
        for s in &mut samples {
            s.true_label = Some(0);
        }
        assert!(make_gcd_split(samples, 0.25, 0.1, 0).is_err());
    }

    #[test]
    fn zero_noise_collapses_to_centers() {
        let samples = SyntheticConfig {
            num_categories: 3,
            per_category: 5,
            dim: 6,
            noise_sigma: 0.0,
            noise_rank: None,
            outlier_fraction: 0.0,
            ..Default::default()
        }
        .generate()
        .unwrap();
        for a in &samples {
            for b in &samples {
                if a.true_label == b.true_label {
                    assert_eq!(a.vector, b.vector);
                }
            }
            let norm: f64 = a.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn synthetic_counts() {
        let samples = SyntheticConfig {
            num_categories: 20,
            per_category: 200,
            dim: 32,
            ..Default::default()
        }
        .generate()
        .unwrap();
        assert_eq!(samples.len(), 4000);
        let labels: BTreeSet<_> = samples.iter().map(|s| s.true_label.unwrap()).collect();
        assert_eq!(labels.len(), 20);
        let test = samples.iter().filter(|s| s.split == Split::Test).count();
        assert_eq!(test, 800);
    }
}
