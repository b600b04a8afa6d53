//! Separating novel clusters from known ones and naming them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{invalid, Error, Result};
use crate::evaluation::hungarian;
use crate::oracle::{ask_name, CacheStore, Oracle, INTERPRET_ARITY};
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoupling {
    /// Cluster → known category it was aligned with.
    pub known: BTreeMap<usize, usize>,
    pub novel: BTreeSet<usize>,
}

/// Aligns one prototype per known category (mean labeled feature) with the cluster
/// centers by minimum total Euclidean distance; unmatched clusters are novel.
///
/// `labeled` holds `(row, category)` pairs into `features`.
pub fn decouple_novel<F: Scalar>(
    model: &ClusterModel<F>,
    features: ArrayView2<F>,
    labeled: &[(usize, usize)],
) -> Result<Decoupling> {
    if labeled.is_empty() {
        return invalid("decoupling needs labeled samples");
    }
    let mut sums: BTreeMap<usize, (Vec<F>, usize)> = BTreeMap::new();
    for &(row, cat) in labeled {
        let e = sums.entry(cat).or_insert_with(|| (vec![F::zero(); features.ncols()], 0));
        for (acc, &v) in e.0.iter_mut().zip(features.row(row)) {
            *acc += v;
        }
        e.1 += 1;
    }
    let n_known = sums.len();
    if model.k < n_known {
        return Err(Error::InvalidArgument(format!(
            "{} clusters cannot cover {n_known} known categories",
            model.k
        )));
    }
    let cats: Vec<usize> = sums.keys().copied().collect();
    let protos: Vec<Vec<F>> = sums
        .values()
        .map(|(s, n)| s.iter().map(|&v| v / F::of(*n as f64)).collect())
        .collect();
    let mut cost = Array2::<F>::zeros((model.k, model.k));
    for (r, p) in protos.iter().enumerate() {
        for (c, center) in model.centers.outer_iter().enumerate() {
            cost[[r, c]] = sq_dist(p, &center.to_vec()).sqrt();
        }
    }
    let (assignment, _) = hungarian(&cost)?;
    let known: BTreeMap<usize, usize> = (0..n_known).map(|r| (assignment[r], cats[r])).collect();
    let novel = (0..model.k).filter(|c| !known.contains_key(c)).collect();
    Ok(Decoupling { known, novel })
}

/// The `n` members of `cluster` closest to its center, ascending id on ties.
pub fn representatives<F: Scalar>(
    model: &ClusterModel<F>,
    cluster: usize,
    features: ArrayView2<F>,
    n: usize,
) -> Result<Vec<usize>> {
    if n == 0 {
        return invalid("need at least one representative");
    }
    if cluster >= model.k {
        return invalid(format!("cluster {cluster} out of range"));
    }
    let center = model.centers.row(cluster).to_vec();
    let mut members: Vec<(F, usize)> = model
        .members(cluster)
        .into_iter()
        .map(|i| (sq_dist(&features.row(i).to_vec(), &center), i))
        .collect();
    if members.is_empty() {
        return Err(Error::InvalidArgument(format!("cluster {cluster} is empty")));
    }
    members.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    Ok(members.into_iter().take(n).map(|m| m.1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterName {
    pub cluster: usize,
    /// Sample ids of the representatives.
    pub representatives: Vec<usize>,
    pub texts: Vec<Option<String>>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationResult {
    pub known_clusters: BTreeMap<usize, usize>,
    pub novel: Vec<ClusterName>,
}

/// Representatives for every novel cluster, names still empty. `sample_ids` maps
/// feature rows to dataset ids.
pub fn interpretation_skeleton<F: Scalar>(
    model: &ClusterModel<F>,
    features: ArrayView2<F>,
    decoupling: &Decoupling,
    sample_ids: &[usize],
    texts: &[Option<String>],
) -> Result<InterpretationResult> {
    let mut novel = Vec::with_capacity(decoupling.novel.len());
    for &c in &decoupling.novel {
        if model.members(c).is_empty() {
            warn!("novel cluster {c} is empty; skipped");
            continue;
        }
        let reps = representatives(model, c, features, INTERPRET_ARITY)?;
        novel.push(ClusterName {
            cluster: c,
            representatives: reps.iter().map(|&r| sample_ids[r]).collect(),
            texts: reps.iter().map(|&r| texts[sample_ids[r]].clone()).collect(),
            name: None,
        });
    }
    Ok(InterpretationResult {
        known_clusters: decoupling.known.clone(),
        novel,
    })
}

/// Names each novel cluster through the shared cache. Clusters lacking text (with a live
/// oracle) or with fewer than three representatives keep `name = None`.
pub fn name_clusters(
    mut result: InterpretationResult,
    oracle: &dyn Oracle,
    cache: &CacheStore,
) -> Result<InterpretationResult> {
    for entry in &mut result.novel {
        if entry.representatives.len() != INTERPRET_ARITY {
            warn!("cluster {} has fewer than {INTERPRET_ARITY} members; not named", entry.cluster);
            continue;
        }
        let texts: Vec<String> = if entry.texts.iter().all(Option::is_some) {
            entry.texts.iter().map(|t| t.clone().unwrap()).collect()
        } else if oracle.is_live() {
            warn!("cluster {} has representatives without text; not named", entry.cluster);
            continue;
        } else {
            entry
                .representatives
                .iter()
                .zip(&entry.texts)
                .map(|(id, t)| t.clone().unwrap_or_else(|| format!("sample {id}")))
                .collect()
        };
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        entry.name = ask_name(oracle, &entry.representatives, &refs, cache)?;
    }
    Ok(result)
}
