//! Projection head training: pretraining on labeled data, then the discovery loop with
//! interval refreshes, oracle-refined neighbours and the contrastive objective.

mod head;
mod loss;
mod optim;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, info};
use ndarray::{Array2, ArrayView2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use head::{ForwardCache, HeadGrads, ProjectionHead};
pub use loss::{ce_from_logits, objective, rncl_from_similarities, rncl_loss, ContrastiveBatch, LabeledBatch, LossParts};
pub use optim::{augment, Adam};

use crate::clustering::{kmeans_best_of, ClusterModel, KMeansParams};
use crate::data::{DatasetBundle, Split};
use crate::error::{invalid, Error, Result};
use crate::evaluation::wrong_cluster_rate;
use crate::oracle::{ask_all, build_exchange, CacheStore, Oracle, OracleExchange};
use crate::sampling::{build_knn, LisScore, NeighborIndex, SelectionSet, Strategy};
use crate::scalar::Scalar;
use crate::util::derive_seed;

/// Hyperparameters of pretraining and the discovery loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Student-t degrees of freedom.
    pub alpha: f64,
    /// Neighbours per sample.
    pub k: usize,
    /// Selection budget per refresh.
    pub m: usize,
    /// Candidates per oracle query.
    pub q_size: usize,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    /// Refresh embeddings, clusters, neighbours and queries every `interval` epochs.
    pub interval: usize,
    pub lr_pretrain: f64,
    pub lr_train: f64,
    pub batch_size: usize,
    pub augment_sigma: f64,
    pub augment_drop: f64,
    pub ce_weight: f64,
    /// Output width of the head; defaults to the input width.
    pub out_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub init_std: f64,
    pub normalize_features: bool,
    pub strategy: Strategy,
    /// Clusters used during training; defaults to `|Y_k| + |Y_n|`.
    pub num_clusters: Option<usize>,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            alpha: 1.0,
            k: 50,
            m: 500,
            q_size: 2,
            pretrain_epochs: 100,
            epochs: 50,
            interval: 5,
            lr_pretrain: 5e-5,
            lr_train: 1e-5,
            batch_size: 64,
            augment_sigma: 0.01,
            augment_drop: 0.05,
            ce_weight: 1.0,
            out_dim: None,
            hidden_dim: None,
            init_std: 0.01,
            normalize_features: true,
            strategy: Strategy::Lis,
            num_clusters: None,
            kmeans_max_iter: 100,
            kmeans_restarts: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be > 0".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        if self.interval == 0 {
            return Err(Error::Config("interval must be >= 1".into()));
        }
        if self.k == 0 || self.m == 0 {
            return Err(Error::Config("k and m must be >= 1".into()));
        }
        if self.q_size < 2 {
            return Err(Error::Config("q_size must be >= 2".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.augment_sigma >= 0.0) || !(0.0..1.0).contains(&self.augment_drop) {
            return Err(Error::Config("augment_sigma must be >= 0 and augment_drop in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborSource {
    LlmRefined,
    RandomKnn,
}

/// The positive neighbour of every training sample for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborAssignment {
    pub positive: Vec<usize>,
    pub source: Vec<NeighborSource>,
}

/// Selected samples with a choice take the chosen candidate; everyone else draws a
/// uniformly random kNN neighbour. Ids here are row positions of `index`.
pub fn assign_neighbors<F: Scalar>(
    selection: &SelectionSet,
    exchanges: &[OracleExchange],
    index: &NeighborIndex<F>,
    rng: &mut ChaCha8Rng,
) -> Result<NeighborAssignment> {
    let refined: HashMap<usize, usize> = exchanges
        .iter()
        .filter(|e| selection.ids.contains(&e.query_id))
        .filter_map(|e| e.chosen_sample().map(|s| (e.query_id, s)))
        .collect();
    let mut positive = Vec::with_capacity(index.len());
    let mut source = Vec::with_capacity(index.len());
    for (i, nbrs) in index.neighbors.iter().enumerate() {
        match refined.get(&i) {
            Some(&p) if p != i => {
                positive.push(p);
                source.push(NeighborSource::LlmRefined);
            }
            _ => {
                let &p = nbrs
                    .choose(rng)
                    .ok_or_else(|| Error::InvalidArgument(format!("sample {i} has no neighbours")))?;
                positive.push(p);
                source.push(NeighborSource::RandomKnn);
            }
        }
    }
    Ok(NeighborAssignment { positive, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub rncl_loss: f64,
    pub ce_loss: f64,
    /// Digest of the embedding snapshot behind this epoch's clusters and neighbours.
    pub snapshot: String,
    pub selected: usize,
    pub refined: usize,
    pub cache_hits: u64,
    pub dispatches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub epoch: usize,
    pub snapshot: String,
    pub inertia: f64,
    pub selected: usize,
    pub queried: usize,
    pub abstained: usize,
    /// Share of selected samples sitting in a wrong cluster (needs labels).
    pub selection_wrong_rate: Option<f64>,
    /// Share of all training samples in a wrong cluster (needs labels).
    pub base_wrong_rate: Option<f64>,
    /// Share of refined positives with the anchor's true label (needs labels).
    pub refined_precision: Option<f64>,
    /// Share of kNN neighbours with the owner's true label (needs labels).
    pub knn_purity: Option<f64>,
    /// Selected, answered queries as sample ids, ascending.
    pub exchanges: Vec<ExchangeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub query: usize,
    pub candidates: Vec<usize>,
    pub chosen: Option<usize>,
}

/// Everything the loop hands back besides the trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub input_scale: f64,
    pub known_classes: Vec<usize>,
    pub pretrain_ce: Vec<f64>,
    pub epochs: Vec<EpochReport>,
    pub refreshes: Vec<RefreshReport>,
}

/// Shared state of one refresh.
#[derive(Debug, Clone)]
pub struct Snapshot<F> {
    pub features: Array2<F>,
    pub digest: String,
    pub clusters: ClusterModel<F>,
    pub index: NeighborIndex<F>,
    pub scores: LisScore<F>,
}

pub fn snapshot_digest<F: Scalar>(m: ArrayView2<F>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for &v in m.iter() {
        h.update(v.bits_le());
    }
    hex::encode(&h.finalize()[..16])
}

/// Embeds `inputs`, clusters, builds the neighbour index and scores every row.
pub fn take_snapshot<F: Scalar>(
    head: &ProjectionHead<F>,
    inputs: ArrayView2<F>,
    k_clusters: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Snapshot<F>> {
    let features = head.embed(inputs);
    let digest = snapshot_digest(features.view());
    let params = KMeansParams {
        max_iter: cfg.kmeans_max_iter,
        ..KMeansParams::new(k_clusters, seed)
    };
    let clusters = kmeans_best_of(features.view(), &params, cfg.kmeans_restarts.max(1))?;
    let index = build_knn(features.view(), cfg.k)?;
    let scores = LisScore::compute(
        features.view(),
        clusters.centers.view(),
        &clusters.pseudo_labels,
        &index,
        F::of(cfg.alpha),
    )?;
    Ok(Snapshot {
        features,
        digest,
        clusters,
        index,
        scores,
    })
}

/// Mean L2 norm of the rows; inputs are divided by it so `tanh` starts near its linear range.
fn mean_norm(bundle: &DatasetBundle, ids: &[usize]) -> f64 {
    let total: f64 = ids
        .iter()
        .map(|&i| bundle.samples[i].vector.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    let m = total / ids.len().max(1) as f64;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Scaled input matrix of every sample in the bundle, in id order.
pub fn scaled_inputs<F: Scalar>(bundle: &DatasetBundle, scale: f64) -> Array2<F> {
    let all: Vec<usize> = (0..bundle.len()).collect();
    bundle.matrix::<f64>(&all).mapv(|v| F::of(v * scale))
}

fn rows<F: Scalar>(m: ArrayView2<F>, ids: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((ids.len(), m.ncols()));
    for (r, &i) in ids.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

fn augmented_rows<F: Scalar>(m: ArrayView2<F>, ids: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Array2<F> {
    let mut out = Array2::zeros((ids.len(), m.ncols()));
    for (r, &i) in ids.iter().enumerate() {
        let row = m.row(i).to_vec();
        let a = augment(&row, rng, cfg.augment_sigma, cfg.augment_drop);
        for (c, v) in a.into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    out
}

/// Splits a shuffled order into batches of `size`; a trailing singleton joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Contrastive step inputs for one batch of training positions.
pub fn contrastive_batch<F: Scalar>(
    inputs: ArrayView2<F>,
    batch: &[usize],
    assignment: &NeighborAssignment,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> ContrastiveBatch<F> {
    let mut slot: HashMap<usize, usize> = batch.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let mut members = batch.to_vec();
    let mut positives = Vec::with_capacity(batch.len());
    for &i in batch {
        let p = assignment.positive[i];
        let r = *slot.entry(p).or_insert_with(|| {
            members.push(p);
            members.len() - 1
        });
        positives.push(r);
    }
    ContrastiveBatch {
        inputs: augmented_rows(inputs, &members, cfg, rng),
        n_anchors: batch.len(),
        positives,
    }
}

struct LabeledStream {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl LabeledStream {
    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.cursor == 0 {
                self.order.shuffle(&mut self.rng);
            }
            out.push(self.order[self.cursor]);
            self.cursor = (self.cursor + 1) % self.order.len();
        }
        out
    }
}

const STREAM_INIT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_REFRESH: u64 = 3;
const STREAM_EPOCH: u64 = 4;
const STREAM_LABELED: u64 = 5;
const STREAM_SELECT: u64 = 6;

/// Trains the head: CE pretraining on `D^l`, then the discovery epochs over `D^all`.
/// Passing `oracle = None` runs the loop with random kNN neighbours only.
pub fn run_loop<F: Scalar>(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    oracle: Option<&dyn Oracle>,
    cache: &CacheStore,
) -> Result<(ProjectionHead<F>, LoopReport)> {
    cfg.validate()?;
    let train_ids = bundle.train_ids();
    if train_ids.len() < 2 {
        return Err(Error::Data("need at least two training samples".into()));
    }
    let known_classes: Vec<usize> = bundle.known_categories.iter().copied().collect();
    let class_of: BTreeMap<usize, usize> = known_classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let k_clusters = cfg.num_clusters.unwrap_or_else(|| bundle.num_categories());
    if k_clusters == 0 || k_clusters > train_ids.len() {
        return invalid(format!("cannot form {k_clusters} clusters from {} samples", train_ids.len()));
    }

    let input_scale = 1.0 / mean_norm(bundle, &train_ids);
    let all_inputs: Array2<F> = scaled_inputs(bundle, input_scale);
    let inputs = rows(all_inputs.view(), &train_ids);
    let pos_of: HashMap<usize, usize> = train_ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let labeled_pos: Vec<usize> = (0..train_ids.len())
        .filter(|&p| bundle.samples[train_ids[p]].split == Split::Labeled)
        .collect();
    let mut labeled_classes = vec![usize::MAX; train_ids.len()];
    for &p in &labeled_pos {
        let l = bundle.samples[train_ids[p]].true_label.expect("labeled sample has a label");
        labeled_classes[p] = class_of[&l];
    }
    let truth: Option<Vec<usize>> = train_ids.iter().map(|&id| bundle.samples[id].true_label).collect();
    let texts: Vec<String> = train_ids.iter().map(|&id| bundle.samples[id].display_text()).collect();
    let eligible: BTreeSet<usize> = (0..train_ids.len())
        .filter(|&p| bundle.samples[train_ids[p]].split == Split::Unlabeled)
        .collect();

    let d = bundle.dim;
    let mut head = ProjectionHead::<F>::new(
        d,
        cfg.hidden_dim.unwrap_or(d),
        cfg.out_dim.unwrap_or(d),
        known_classes.len().max(1),
        cfg.init_std,
        derive_seed(cfg.seed, STREAM_INIT, 0),
    );
    head.normalize = cfg.normalize_features;
    let tau = F::of(cfg.tau);
    let ce_weight = F::of(cfg.ce_weight);

    let labeled_batch = |ids: &[usize]| LabeledBatch {
        inputs: rows(inputs.view(), ids),
        classes: ids.iter().map(|&p| labeled_classes[p]).collect(),
    };

    // Pretraining on labeled data.
    let mut pretrain_ce = Vec::with_capacity(cfg.pretrain_epochs);
    if !labeled_pos.is_empty() {
        let mut opt = Adam::new(&head, cfg.lr_pretrain);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_PRETRAIN, 0));
        for _ in 0..cfg.pretrain_epochs {
            let mut order = labeled_pos.clone();
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let bs = batches(&order, cfg.batch_size);
            for b in &bs {
                let lb = labeled_batch(b);
                let (parts, grads) = objective(&head, None, Some(&lb), tau, F::one())?;
                opt.step(&mut head, &grads);
                sum += parts.ce.as_f64();
            }
            check_head(&head)?;
            pretrain_ce.push(sum / bs.len().max(1) as f64);
        }
    }

    let mut opt = Adam::new(&head, cfg.lr_train);
    let mut labeled_stream = LabeledStream {
        order: labeled_pos.clone(),
        cursor: 0,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_LABELED, 0)),
    };
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut refreshes = Vec::new();
    let mut snapshot: Option<Snapshot<F>> = None;
    let mut selection = SelectionSet {
        ids: BTreeSet::new(),
        m: cfg.m,
    };
    let mut exchanges: Vec<OracleExchange> = Vec::new();

    for epoch in 0..cfg.epochs {
        let stats_before = cache.stats();
        if epoch % cfg.interval == 0 {
            let snap = take_snapshot(
                &head,
                inputs.view(),
                k_clusters,
                cfg,
                derive_seed(cfg.seed, STREAM_REFRESH, epoch as u64),
            )?;
            selection = cfg.strategy.select_set(
                &snap.scores,
                cfg.m,
                &eligible,
                derive_seed(cfg.seed, STREAM_SELECT, epoch as u64),
            );
            exchanges.clear();
            if let Some(oracle) = oracle {
                let mut pending = Vec::with_capacity(selection.len());
                for &q in &selection.ids {
                    if let Some(mut ex) = build_exchange(
                        q,
                        &snap.index,
                        &snap.clusters.pseudo_labels,
                        snap.clusters.centers.view(),
                        snap.features.view(),
                        cfg.q_size,
                        &texts,
                    )? {
                        ex.query_id = train_ids[ex.query_id];
                        for c in &mut ex.candidates {
                            c.0 = train_ids[c.0];
                        }
                        pending.push(ex);
                    }
                }
                ask_all(oracle, &mut pending, cache);
                for mut ex in pending {
                    ex.query_id = pos_of[&ex.query_id];
                    for c in &mut ex.candidates {
                        c.0 = pos_of[&c.0];
                    }
                    exchanges.push(ex);
                }
            }
            refreshes.push(refresh_report(epoch, &snap, &selection, &exchanges, truth.as_deref(), &train_ids)?);
            info!(
                "epoch {epoch}: refresh, |S| = {}, queried = {}",
                selection.len(),
                exchanges.len()
            );
            snapshot = Some(snap);
        }
        let snap = snapshot.as_ref().expect("snapshot taken at epoch 0");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EPOCH, epoch as u64));
        let assignment = assign_neighbors(&selection, &exchanges, &snap.index, &mut rng)?;
        let mut order: Vec<usize> = (0..train_ids.len()).collect();
        order.shuffle(&mut rng);
        let (mut rncl_sum, mut ce_sum) = (0.0, 0.0);
        let bs = batches(&order, cfg.batch_size);
        for b in &bs {
            let cb = contrastive_batch(inputs.view(), b, &assignment, cfg, &mut rng);
            let lb = (!labeled_pos.is_empty()).then(|| labeled_batch(&labeled_stream.next_batch(cfg.batch_size)));
            let (parts, grads) = objective(&head, Some(&cb), lb.as_ref(), tau, ce_weight)?;
            opt.step(&mut head, &grads);
            rncl_sum += parts.rncl.as_f64();
            ce_sum += parts.ce.as_f64();
        }
        check_head(&head)?;
        let stats = cache.stats();
        let refined = assignment
            .source
            .iter()
            .filter(|&&s| s == NeighborSource::LlmRefined)
            .count();
        let report = EpochReport {
            epoch,
            rncl_loss: rncl_sum / bs.len() as f64,
            ce_loss: ce_sum / bs.len() as f64,
            snapshot: snap.digest.clone(),
            selected: selection.len(),
            refined,
            cache_hits: stats.hits - stats_before.hits,
            dispatches: stats.dispatches - stats_before.dispatches,
        };
        debug!("epoch {epoch}: rncl {:.4} ce {:.4}", report.rncl_loss, report.ce_loss);
        epochs.push(report);
    }
    Ok((
        head,
        LoopReport {
            input_scale,
            known_classes,
            pretrain_ce,
            epochs,
            refreshes,
        },
    ))
}

fn check_head<F: Scalar>(head: &ProjectionHead<F>) -> Result<()> {
    if head.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric("head parameters became non-finite".into()))
    }
}

fn refresh_report<F: Scalar>(
    epoch: usize,
    snap: &Snapshot<F>,
    selection: &SelectionSet,
    exchanges: &[OracleExchange],
    truth: Option<&[usize]>,
    train_ids: &[usize],
) -> Result<RefreshReport> {
    let labels = &snap.clusters.pseudo_labels;
    let sel: Vec<usize> = selection.ids.iter().copied().collect();
    let (selection_wrong_rate, base_wrong_rate, refined_precision, knn_purity) = match truth {
        Some(t) => {
            let all: Vec<usize> = (0..t.len()).collect();
            let refined: Vec<(usize, usize)> = exchanges
                .iter()
                .filter_map(|e| e.chosen_sample().map(|s| (e.query_id, s)))
                .collect();
            let precision = (!refined.is_empty())
                .then(|| refined.iter().filter(|(q, s)| t[*q] == t[*s]).count() as f64 / refined.len() as f64);
            let (mut same, mut total) = (0usize, 0usize);
            for (i, nb) in snap.index.neighbors.iter().enumerate() {
                same += nb.iter().filter(|&&j| t[j] == t[i]).count();
                total += nb.len();
            }
            (
                (!sel.is_empty()).then(|| wrong_cluster_rate(&sel, labels, t)).transpose()?,
                Some(wrong_cluster_rate(&all, labels, t)?),
                precision,
                Some(same as f64 / total.max(1) as f64),
            )
        }
        None => (None, None, None, None),
    };
    Ok(RefreshReport {
        epoch,
        snapshot: snap.digest.clone(),
        inertia: snap.clusters.inertia.as_f64(),
        selected: selection.len(),
        queried: exchanges.len(),
        abstained: exchanges.iter().filter(|e| e.chosen_sample().is_none()).count(),
        selection_wrong_rate,
        base_wrong_rate,
        refined_precision,
        knn_purity,
        exchanges: exchanges
            .iter()
            .map(|e| ExchangeRecord {
                query: train_ids[e.query_id],
                candidates: e.candidates.iter().map(|c| train_ids[c.0]).collect(),
                chosen: e.chosen_sample().map(|s| train_ids[s]),
            })
            .collect(),
    })
}
