//! Sampler benchmark: how often each strategy picks samples sitting in the wrong cluster.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_best_of, KMeansParams};
use crate::data::{DatasetBundle, Split, SyntheticConfig};
use crate::error::{invalid, Error, Result};
use crate::evaluation::wrong_cluster_rate;
use crate::pipeline::PipelineConfig;
use crate::sampling::{build_knn, LisScore, Strategy};
use crate::scalar::Scalar;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub strategies: Vec<Strategy>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub alpha: f64,
    /// Defaults to the number of categories.
    pub num_clusters: Option<usize>,
    pub kmeans_restarts: usize,
    /// Score on unit-normalised rows, the geometry the training loop works in.
    pub normalize: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            budget: 200,
            seeds: (0..5).collect(),
            k: 50,
            alpha: 1.0,
            num_clusters: None,
            kmeans_restarts: 1,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub selected: usize,
    pub wrong_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Mean wrong rate per strategy, in `strategies` order.
    pub means: Vec<(Strategy, f64)>,
    /// Wrong-cluster share over every eligible sample, per seed.
    pub base_rates: Vec<f64>,
}

impl BenchReport {
    pub fn mean(&self, s: Strategy) -> Option<f64> {
        self.means.iter().find(|m| m.0 == s).map(|m| m.1)
    }

    pub fn mean_base_rate(&self) -> f64 {
        self.base_rates.iter().sum::<f64>() / self.base_rates.len().max(1) as f64
    }
}

/// Scores every strategy on the input embeddings of `D^all`, one snapshot per seed.
/// Unlabeled samples are eligible; every training sample needs a true label.
pub fn bench_samplers<F: Scalar>(bundle: &DatasetBundle, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.strategies.is_empty() || cfg.seeds.is_empty() || cfg.budget == 0 {
        return invalid("bench needs strategies, seeds and a positive budget");
    }
    let train_ids = bundle.train_ids();
    let truth: Vec<usize> = train_ids
        .iter()
        .map(|&id| {
            bundle.samples[id]
                .true_label
                .ok_or_else(|| Error::Data(format!("sample {id} has no true label")))
        })
        .collect::<Result<_>>()?;
    let eligible: BTreeSet<usize> = (0..train_ids.len())
        .filter(|&p| bundle.samples[train_ids[p]].split == Split::Unlabeled)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data("no unlabeled samples to select from".into()));
    }
    let mut features: Array2<F> = bundle.matrix(&train_ids);
    if cfg.normalize {
        for mut row in features.outer_iter_mut() {
            let n = row.iter().map(|&v| v * v).sum::<F>().sqrt();
            if n > F::zero() {
                row.mapv_inplace(|v| v / n);
            }
        }
    }
    let k = cfg.num_clusters.unwrap_or_else(|| bundle.num_categories());
    let index = build_knn(features.view(), cfg.k)?;
    let eligible_vec: Vec<usize> = eligible.iter().copied().collect();

    let mut rows = Vec::new();
    let mut base_rates = Vec::new();
    for &seed in &cfg.seeds {
        let model = kmeans_best_of(features.view(), &KMeansParams::new(k, derive_seed(seed, 0xbe, 0)), cfg.kmeans_restarts)?;
        let scores = LisScore::compute(
            features.view(),
            model.centers.view(),
            &model.pseudo_labels,
            &index,
            F::of(cfg.alpha),
        )?;
        base_rates.push(wrong_cluster_rate(&eligible_vec, &model.pseudo_labels, &truth)?);
        for &s in &cfg.strategies {
            let picked = s.select_budget(&scores, cfg.budget, &eligible, derive_seed(seed, 0xbe, 1));
            rows.push(BenchRow {
                strategy: s,
                seed,
                selected: picked.len(),
                wrong_rate: wrong_cluster_rate(&picked, &model.pseudo_labels, &truth)?,
            });
        }
    }
    let means = cfg
        .strategies
        .iter()
        .map(|&s| {
            let v: Vec<f64> = rows.iter().filter(|r| r.strategy == s).map(|r| r.wrong_rate).collect();
            (s, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(BenchReport { rows, means, base_rates })
}

/// Synthetic data and loop settings on which the discovery loop has something to learn:
/// category centers sit orthogonal to a rank-16 shared nuisance subspace carrying noise
/// twice as strong as the class noise, so raw cosine neighbourhoods are poor and the head
/// has to learn to suppress those directions.
///
/// Pretraining is effectively off (tiny step size); CE on the few labels pulled the head
/// towards the known categories at the expense of the novel ones.
pub fn discovery_preset(seed: u64) -> (SyntheticConfig, PipelineConfig) {
    let data = SyntheticConfig {
        noise_sigma: 2.0,
        noise_rank: None,
        outlier_fraction: 0.0,
        nuisance_rank: 16,
        nuisance_sigma: 4.0,
        seed,
        ..SyntheticConfig::default()
    };
    let mut cfg = PipelineConfig::default();
    cfg.train.seed = seed;
    cfg.train.tau = 0.3;
    cfg.train.k = 10;
    cfg.train.m = 3000;
    cfg.train.lr_pretrain = 1e-9;
    cfg.train.lr_train = 1e-3;
    cfg.train.ce_weight = 0.1;
    cfg.eval_restarts = 20;
    (data, cfg)
}
