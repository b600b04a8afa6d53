//! Scalable query construction, oracle dispatch and query result storage.

mod cache;
mod live;
mod mock;
mod prompt;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use log::warn;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use cache::{CacheStats, CacheStore, CachedAnswer};
pub use live::{LiveOracle, LiveOracleConfig};
pub use mock::{MockBehavior, MockOracle};
pub use prompt::{
    build_interpret_prompt, build_query_prompt, cache_key, estimate_tokens, parse_choice,
    INTERPRET_ARITY, INTERPRET_TEMPLATE_VERSION, QUERY_TEMPLATE_VERSION,
};

use crate::error::{invalid, Error, Result};
use crate::sampling::NeighborIndex;
use crate::scalar::{sq_dist, Scalar};

/// Parsed oracle reply to a query. `Choice` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Choice(usize),
    Abstain,
}

pub struct ChoiceQuery<'a> {
    pub prompt: &'a str,
    pub query_id: usize,
    pub candidate_ids: &'a [usize],
}

pub struct NameQuery<'a> {
    pub prompt: &'a str,
    pub sample_ids: &'a [usize],
}

/// Anything that can answer query and naming prompts with free text.
pub trait Oracle: Send + Sync {
    fn complete_choice(&self, q: &ChoiceQuery<'_>) -> Result<String>;
    fn complete_name(&self, q: &NameQuery<'_>) -> Result<String>;

    fn is_live(&self) -> bool {
        false
    }

    /// Maximum concurrent requests.
    fn in_flight(&self) -> usize {
        1
    }
}

/// One query: the selected sample, its ordered `(sample, cluster)` candidates and the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleExchange {
    pub query_id: usize,
    pub candidates: Vec<(usize, usize)>,
    pub prompt: String,
    pub answer: Option<Answer>,
    pub cache_key: String,
}

impl OracleExchange {
    /// The candidate sample the answer points at, if any.
    pub fn chosen_sample(&self) -> Option<usize> {
        match self.answer {
            Some(Answer::Choice(n)) => self.candidates.get(n - 1).map(|c| c.0),
            _ => None,
        }
    }

    pub fn candidate_ids(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.0).collect()
    }
}

/// Clusters ranked by how many of the query's neighbours they hold, ties by summed
/// similarity then cluster id. Short lists are padded with the nearest other centers.
pub fn candidate_clusters<F: Scalar>(
    query_id: usize,
    index: &NeighborIndex<F>,
    pseudo_labels: &[usize],
    centers: ArrayView2<F>,
    query_vec: &[F],
    q_size: usize,
) -> Result<Vec<usize>> {
    if q_size < 2 {
        return invalid("q_size must be >= 2");
    }
    let mut hist: BTreeMap<usize, (usize, F)> = BTreeMap::new();
    for (&j, &s) in index.neighbors[query_id].iter().zip(&index.similarities[query_id]) {
        let e = hist.entry(pseudo_labels[j]).or_insert((0, F::zero()));
        e.0 += 1;
        e.1 += s;
    }
    let mut ranked: Vec<(usize, usize, F)> = hist.into_iter().map(|(c, (n, s))| (c, n, s)).collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal))
            .then(a.0.cmp(&b.0))
    });
    let mut out: Vec<usize> = ranked.into_iter().take(q_size).map(|r| r.0).collect();
    if out.len() < q_size {
        let mut rest: Vec<(F, usize)> = centers
            .outer_iter()
            .enumerate()
            .filter(|(c, _)| !out.contains(c))
            .map(|(c, row)| (sq_dist(&row.to_vec(), query_vec), c))
            .collect();
        rest.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        out.extend(rest.into_iter().take(q_size - out.len()).map(|r| r.1));
    }
    Ok(out)
}

/// Most similar neighbour of the query inside `cluster`; on the padding path, the member
/// of `cluster` closest to the query in Euclidean distance.
pub fn pick_candidate_sample<F: Scalar>(
    cluster: usize,
    query_id: usize,
    index: &NeighborIndex<F>,
    pseudo_labels: &[usize],
    features: ArrayView2<F>,
) -> Result<usize> {
    if let Some(&j) = index.neighbors[query_id]
        .iter()
        .find(|&&j| pseudo_labels[j] == cluster)
    {
        return Ok(j);
    }
    let q = features.row(query_id).to_vec();
    pseudo_labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| l == cluster && i != query_id)
        .map(|(i, _)| (sq_dist(&features.row(i).to_vec(), &q), i))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)))
        .map(|(_, i)| i)
        .ok_or_else(|| Error::InvalidArgument(format!("cluster {cluster} has no candidate member")))
}

/// Builds the exchange for one selected sample. `None` if fewer than two candidates exist.
#[allow(clippy::too_many_arguments)]
pub fn build_exchange<F: Scalar>(
    query_id: usize,
    index: &NeighborIndex<F>,
    pseudo_labels: &[usize],
    centers: ArrayView2<F>,
    features: ArrayView2<F>,
    q_size: usize,
    texts: &[String],
) -> Result<Option<OracleExchange>> {
    let qv = features.row(query_id).to_vec();
    let clusters = candidate_clusters(query_id, index, pseudo_labels, centers, &qv, q_size)?;
    let mut candidates = Vec::with_capacity(clusters.len());
    for c in clusters {
        if let Ok(s) = pick_candidate_sample(c, query_id, index, pseudo_labels, features) {
            candidates.push((s, c));
        }
    }
    if candidates.len() < 2 {
        return Ok(None);
    }
    let cand_texts: Vec<&str> = candidates.iter().map(|&(s, _)| texts[s].as_str()).collect();
    let prompt = build_query_prompt(&texts[query_id], &cand_texts)?;
    let mut key_parts = vec![texts[query_id].as_str()];
    key_parts.extend(&cand_texts);
    Ok(Some(OracleExchange {
        query_id,
        candidates,
        prompt,
        answer: None,
        cache_key: cache_key(QUERY_TEMPLATE_VERSION, &key_parts),
    }))
}

/// Resolves one exchange through the cache. Transport failures become `Abstain`.
pub fn ask(oracle: &dyn Oracle, exchange: &OracleExchange, cache: &CacheStore) -> Answer {
    let q_size = exchange.candidates.len();
    let ids = exchange.candidate_ids();
    let stored = cache.resolve(&exchange.cache_key, estimate_tokens(&exchange.prompt), || {
        let q = ChoiceQuery {
            prompt: &exchange.prompt,
            query_id: exchange.query_id,
            candidate_ids: &ids,
        };
        match oracle.complete_choice(&q) {
            Ok(text) => Some(match parse_choice(&text, q_size) {
                Answer::Choice(choice) => CachedAnswer::Choice { choice },
                Answer::Abstain => CachedAnswer::Abstain { abstain: true },
            }),
            Err(e) => {
                warn!("query for sample {} abstained: {e}", exchange.query_id);
                None
            }
        }
    });
    match stored {
        Some(CachedAnswer::Choice { choice }) if (1..=q_size).contains(&choice) => Answer::Choice(choice),
        _ => Answer::Abstain,
    }
}

/// Answers every exchange with up to `oracle.in_flight()` concurrent dispatches.
/// Answers are written back in ascending query id order.
pub fn ask_all(oracle: &dyn Oracle, exchanges: &mut [OracleExchange], cache: &CacheStore) {
    exchanges.sort_by_key(|e| e.query_id);
    let workers = oracle.in_flight().clamp(1, exchanges.len().max(1));
    if workers == 1 {
        for e in exchanges.iter_mut() {
            e.answer = Some(ask(oracle, e, cache));
        }
        return;
    }
    let next = AtomicUsize::new(0);
    let answers: Vec<Mutex<Option<Answer>>> = exchanges.iter().map(|_| Mutex::new(None)).collect();
    let view: &[OracleExchange] = exchanges;
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::SeqCst);
                if i >= view.len() {
                    break;
                }
                *answers[i].lock().unwrap() = Some(ask(oracle, &view[i], cache));
            });
        }
    });
    for (e, a) in exchanges.iter_mut().zip(answers) {
        e.answer = a.into_inner().unwrap();
    }
}

/// Asks the oracle to name a cluster from its representative texts, through the cache.
pub fn ask_name(
    oracle: &dyn Oracle,
    sample_ids: &[usize],
    texts: &[&str],
    cache: &CacheStore,
) -> Result<Option<String>> {
    let prompt = build_interpret_prompt(texts)?;
    let key = cache_key(INTERPRET_TEMPLATE_VERSION, texts);
    let stored = cache.resolve(&key, estimate_tokens(&prompt), || {
        let q = NameQuery {
            prompt: &prompt,
            sample_ids,
        };
        match oracle.complete_name(&q) {
            Ok(name) => Some(CachedAnswer::Name {
                name: name.trim().to_owned(),
            }),
            Err(e) => {
                warn!("naming request failed: {e}");
                None
            }
        }
    });
    Ok(match stored {
        Some(CachedAnswer::Name { name }) => Some(name),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn index_for(neighbors: Vec<Vec<usize>>, sims: Vec<Vec<f64>>) -> NeighborIndex<f64> {
        NeighborIndex {
            k: neighbors[0].len(),
            neighbors,
            similarities: sims,
        }
    }

    #[test]
    fn histogram_ranking() {
        // query 0 with ten neighbours: clusters A=0 ×5, B=1 ×3, C=2 ×2
        let nbrs: Vec<usize> = (1..=10).collect();
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 2, 2];
        let mut neighbors = vec![nbrs.clone()];
        let mut sims = vec![vec![0.5; 10]];
        for _ in 1..=10 {
            neighbors.push(vec![0]);
            sims.push(vec![0.5]);
        }
        let idx = index_for(neighbors, sims);
        let centers = array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let c = candidate_clusters(0, &idx, &labels, centers.view(), &[0.0, 0.0], 2).unwrap();
        assert_eq!(c, vec![0, 1]);
        assert!(candidate_clusters(0, &idx, &labels, centers.view(), &[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn padding_uses_nearest_center() {
        let idx = index_for(vec![vec![1, 2], vec![0, 2], vec![0, 1]], vec![vec![0.9, 0.8]; 3]);
        let labels = vec![0, 0, 0, 1, 2];
        let centers = array![[0.0, 0.0], [5.0, 0.0], [1.0, 0.0]];
        let c = candidate_clusters(0, &idx, &labels, centers.view(), &[0.0, 0.0], 2).unwrap();
        assert_eq!(c, vec![0, 2]);
    }

    #[test]
    fn candidate_sample_rules() {
        let features = array![[0.0, 0.0], [1.0, 0.0], [0.9, 0.1], [3.0, 3.0], [0.5, 0.5], [4.0, 4.0]];
        let labels = vec![0, 1, 1, 2, 2, 2];
        let idx = index_for(
            vec![vec![1, 2], vec![2, 0], vec![1, 0], vec![5, 4], vec![0, 1], vec![3, 4]],
            vec![vec![0.9, 0.7]; 6],
        );
        assert_eq!(pick_candidate_sample(1, 0, &idx, &labels, features.view()).unwrap(), 1);
        // cluster 2 has no neighbour of 0: nearest member is 4
        assert_eq!(pick_candidate_sample(2, 0, &idx, &labels, features.view()).unwrap(), 4);
        assert!(pick_candidate_sample(7, 0, &idx, &labels, features.view()).is_err());
    }
}
