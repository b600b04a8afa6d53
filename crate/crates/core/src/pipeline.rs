//! End-to-end runs: training loop, inductive evaluation, interpretation and the run report.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_best_of, ClusterModel, KMeansParams};
use crate::data::{DatasetBundle, Split};
use crate::error::Result;
use crate::evaluation::{evaluate, EvalReport};
use crate::interpretation::{decouple_novel, interpretation_skeleton, name_clusters, InterpretationResult};
use crate::oracle::{CacheStats, CacheStore, Oracle};
use crate::scalar::Scalar;
use crate::training::{run_loop, scaled_inputs, LoopReport, ProjectionHead, TrainConfig};
use crate::util::derive_seed;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Clusters used at inference; defaults to the training cluster count.
    pub eval_clusters: Option<usize>,
    pub eval_restarts: usize,
    pub interpret: bool,
    /// Attach a 2-D projection of the final features to the report.
    pub projection: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval_clusters: None,
            eval_restarts: 5,
            interpret: true,
            projection: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub dim: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub known_categories: Vec<usize>,
    pub novel_categories: Vec<usize>,
}

impl DatasetSummary {
    pub fn of(bundle: &DatasetBundle) -> Self {
        Self {
            samples: bundle.len(),
            dim: bundle.dim,
            labeled: bundle.ids_with_split(Split::Labeled).len(),
            unlabeled: bundle.ids_with_split(Split::Unlabeled).len(),
            test: bundle.ids_with_split(Split::Test).len(),
            known_categories: bundle.known_categories.iter().copied().collect(),
            novel_categories: bundle.novel_categories.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub mode: String,
    pub dispatches: u64,
    pub cache_hits: u64,
    pub failures: u64,
    pub dispatched_tokens: u64,
    pub cache_entries: usize,
}

/// Everything a run produced, minus wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub training: LoopReport,
    pub oracle: OracleSummary,
    pub eval_clusters: usize,
    pub evaluation: Option<EvalReport>,
    pub interpretation: Option<InterpretationResult>,
    pub projection: Option<Vec<ProjectionPoint>>,
}

impl RunReport {
    /// Flat `key=value` line for scripting.
    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x:.4}"));
        let ev = self.evaluation.as_ref();
        let selected: usize = self.training.refreshes.iter().map(|r| r.selected).sum();
        format!(
            "h_score={} acc_known={} acc_novel={} acc_overall={} selected={} dispatches={} cache_hits={} tokens={}",
            f(ev.and_then(|e| e.h_score)),
            f(ev.and_then(|e| e.acc_known)),
            f(ev.and_then(|e| e.acc_novel)),
            f(ev.map(|e| e.acc_overall)),
            selected,
            self.oracle.dispatches,
            self.oracle.cache_hits,
            self.oracle.dispatched_tokens,
        )
    }
}

/// Final clustering of `D^all` in head space and the nearest-center prediction for every sample.
pub struct Inference<F> {
    pub features: Array2<F>,
    pub train_ids: Vec<usize>,
    pub clusters: ClusterModel<F>,
    /// Predicted cluster per sample id.
    pub predictions: Vec<usize>,
}

pub fn infer<F: Scalar>(
    bundle: &DatasetBundle,
    head: &ProjectionHead<F>,
    input_scale: f64,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Inference<F>> {
    let inputs: Array2<F> = scaled_inputs(bundle, input_scale);
    let all = head.embed(inputs.view());
    let train_ids = bundle.train_ids();
    let mut features = Array2::zeros((train_ids.len(), all.ncols()));
    for (r, &id) in train_ids.iter().enumerate() {
        features.row_mut(r).assign(&all.row(id));
    }
    let clusters = kmeans_best_of(features.view(), &KMeansParams::new(k, seed), restarts)?;
    let predictions = all
        .outer_iter()
        .map(|row| clusters.nearest(&row.to_vec()))
        .collect();
    Ok(Inference {
        features,
        train_ids,
        clusters,
        predictions,
    })
}

/// Accuracy over labeled test samples; `None` when the bundle has none.
pub fn evaluate_test(bundle: &DatasetBundle, predictions: &[usize]) -> Result<Option<EvalReport>> {
    let (pred, truth): (Vec<usize>, Vec<usize>) = bundle
        .samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .filter_map(|s| s.true_label.map(|t| (predictions[s.id], t)))
        .unzip();
    if pred.is_empty() {
        return Ok(None);
    }
    evaluate(&pred, &truth, &bundle.known_categories).map(Some)
}

/// Decouples novel clusters and, when an oracle is given, names them.
pub fn interpret<F: Scalar>(
    bundle: &DatasetBundle,
    inference: &Inference<F>,
    oracle: Option<&dyn Oracle>,
    cache: &CacheStore,
) -> Result<Option<InterpretationResult>> {
    let labeled: Vec<(usize, usize)> = inference
        .train_ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| bundle.samples[id].split == Split::Labeled)
        .filter_map(|(r, &id)| bundle.samples[id].true_label.map(|l| (r, l)))
        .collect();
    if labeled.is_empty() {
        return Ok(None);
    }
    let known: BTreeSet<usize> = labeled.iter().map(|p| p.1).collect();
    if inference.clusters.k < known.len() {
        return Ok(None);
    }
    let decoupling = decouple_novel(&inference.clusters, inference.features.view(), &labeled)?;
    let texts: Vec<Option<String>> = bundle.samples.iter().map(|s| s.text.clone()).collect();
    let skeleton = interpretation_skeleton(
        &inference.clusters,
        inference.features.view(),
        &decoupling,
        &inference.train_ids,
        &texts,
    )?;
    match oracle {
        Some(o) => name_clusters(skeleton, o, cache).map(Some),
        None => Ok(Some(skeleton)),
    }
}

const STREAM_EVAL: u64 = 0xe7a1;

/// Trains, evaluates on the test split and interprets novel clusters.
pub fn run_pipeline<F: Scalar>(
    bundle: &DatasetBundle,
    cfg: &PipelineConfig,
    oracle: Option<&dyn Oracle>,
    cache: &CacheStore,
    mode: &str,
) -> Result<(ProjectionHead<F>, RunReport)> {
    let before: CacheStats = cache.stats();
    let (head, training) = run_loop::<F>(bundle, &cfg.train, oracle, cache)?;
    let k_train = cfg.train.num_clusters.unwrap_or_else(|| bundle.num_categories());
    let k_eval = cfg.eval_clusters.unwrap_or(k_train).min(bundle.train_ids().len());
    let inference = infer(
        bundle,
        &head,
        training.input_scale,
        k_eval,
        cfg.eval_restarts,
        derive_seed(cfg.train.seed, STREAM_EVAL, 0),
    )?;
    let evaluation = evaluate_test(bundle, &inference.predictions)?;
    let interpretation = if cfg.interpret {
        interpret(bundle, &inference, oracle, cache)?
    } else {
        None
    };
    let projection = cfg.projection.then(|| projection_points(bundle, &inference));
    let after = cache.stats();
    let report = RunReport {
        version: REPORT_VERSION,
        config: cfg.clone(),
        dataset: DatasetSummary::of(bundle),
        training,
        oracle: OracleSummary {
            mode: mode.to_string(),
            dispatches: after.dispatches - before.dispatches,
            cache_hits: after.hits - before.hits,
            failures: after.failures - before.failures,
            dispatched_tokens: after.dispatched_tokens - before.dispatched_tokens,
            cache_entries: cache.len(),
        },
        eval_clusters: k_eval,
        evaluation,
        interpretation,
        projection,
    };
    Ok((head, report))
}

/// Per-sample coordinates on the top two principal axes, for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
    pub label: Option<usize>,
}

/// Projects the rows onto their top two principal axes (power iteration with deflation).
/// Each axis is signed so its largest-magnitude coordinate is positive.
pub fn project_2d<F: Scalar>(features: ArrayView2<F>) -> Array2<f64> {
    let x = features.mapv(|v| v.as_f64());
    let (n, d) = x.dim();
    let mean = x.sum_axis(Axis(0)) / n.max(1) as f64;
    let centered = &x - &mean;
    let mut cov = centered.t().dot(&centered) / n.max(1) as f64;
    let mut axes = Array2::<f64>::zeros((d, 2));
    for a in 0..2.min(d) {
        let mut v = Array1::from_iter((0..d).map(|i| 1.0 + i as f64 / d as f64));
        for _ in 0..500 {
            let next = cov.dot(&v);
            let norm = next.dot(&next).sqrt();
            if norm < 1e-300 {
                break;
            }
            v = next / norm;
        }
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        let pivot = v.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if pivot < 0.0 {
            v.mapv_inplace(|c| -c);
        }
        let lambda = v.dot(&cov.dot(&v));
        let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        cov = cov - outer * lambda;
        axes.column_mut(a).assign(&v);
    }
    centered.dot(&axes)
}

pub fn projection_points<F: Scalar>(bundle: &DatasetBundle, inference: &Inference<F>) -> Vec<ProjectionPoint> {
    let coords = project_2d(inference.features.view());
    inference
        .train_ids
        .iter()
        .enumerate()
        .map(|(r, &id)| ProjectionPoint {
            id,
            x: coords[[r, 0]],
            y: coords[[r, 1]],
            cluster: inference.clusters.pseudo_labels[r],
            label: bundle.samples[id].true_label,
        })
        .collect()
}
