//! LIS and the baseline uncertainty samplers behind one interface.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lis::{rankings, select, LisScore, SelectionSet};
use crate::error::Error;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Lis,
    Entropy,
    Margin,
    Confidence,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Lis,
        Strategy::Entropy,
        Strategy::Margin,
        Strategy::Confidence,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Lis => "lis",
            Strategy::Entropy => "entropy",
            Strategy::Margin => "margin",
            Strategy::Confidence => "confidence",
            Strategy::Random => "random",
        }
    }

    /// Every eligible id, most informative first.
    pub fn rank<F: Scalar>(self, scores: &LisScore<F>, eligible: &BTreeSet<usize>, seed: u64) -> Vec<usize> {
        let mut ids: Vec<usize> = eligible.iter().copied().collect();
        match self {
            Strategy::Lis => {
                // A sample enters top_m(C) ∩ top_m(H) once m exceeds both of its ranks.
                let (rc, rh) = rankings(&scores.c, &scores.h, eligible);
                let n = scores.c.len();
                let mut pos_c = vec![usize::MAX; n];
                let mut pos_h = vec![usize::MAX; n];
                for (r, &id) in rc.iter().enumerate() {
                    pos_c[id] = r;
                }
                for (r, &id) in rh.iter().enumerate() {
                    pos_h[id] = r;
                }
                ids.sort_by_key(|&id| {
                    let (a, b) = (pos_c[id], pos_h[id]);
                    (a.max(b), a.min(b), id)
                });
            }
            Strategy::Entropy => {
                ids.sort_by(|&a, &b| desc(scores.h[a], scores.h[b]).then(a.cmp(&b)));
            }
            Strategy::Margin => {
                let margin: Vec<F> = scores.q.iter().map(|row| top_two(row).map_or(F::zero(), |(a, b)| a - b)).collect();
                ids.sort_by(|&a, &b| desc(margin[b], margin[a]).then(a.cmp(&b)));
            }
            Strategy::Confidence => {
                let conf: Vec<F> = scores.q.iter().map(|row| top_two(row).map_or(F::one(), |(a, _)| a)).collect();
                ids.sort_by(|&a, &b| desc(conf[b], conf[a]).then(a.cmp(&b)));
            }
            Strategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                ids.shuffle(&mut rng);
            }
        }
        ids
    }

    /// Exactly `min(budget, |eligible|)` ids, in rank order.
    pub fn select_budget<F: Scalar>(
        self,
        scores: &LisScore<F>,
        budget: usize,
        eligible: &BTreeSet<usize>,
        seed: u64,
    ) -> Vec<usize> {
        let mut r = self.rank(scores, eligible, seed);
        r.truncate(budget);
        r
    }

    /// The selection used inside the training loop: the literal intersection for LIS,
    /// the top `m` for the baselines.
    pub fn select_set<F: Scalar>(
        self,
        scores: &LisScore<F>,
        m: usize,
        eligible: &BTreeSet<usize>,
        seed: u64,
    ) -> SelectionSet {
        match self {
            Strategy::Lis => select(&scores.c, &scores.h, m, eligible),
            other => SelectionSet {
                ids: other.select_budget(scores, m, eligible, seed).into_iter().collect(),
                m,
            },
        }
    }
}

fn desc<F: Scalar>(a: F, b: F) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn top_two<F: Scalar>(row: &[F]) -> Option<(F, F)> {
    if row.is_empty() {
        return None;
    }
    let mut first = F::neg_infinity();
    let mut second = F::zero();
    for &p in row {
        if p > first {
            second = if first.is_finite() { first } else { F::zero() };
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Some((first, second))
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown sampling strategy `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores() -> LisScore<f64> {
        LisScore {
            c: vec![3, 2, 1, 0],
            h: vec![0.1, 0.9, 0.8, 0.2],
            q: vec![
                vec![0.9, 0.05, 0.05],
                vec![0.4, 0.35, 0.25],
                vec![0.5, 0.4, 0.1],
                vec![0.6, 0.2, 0.2],
            ],
        }
    }

    #[test]
    fn lis_rank_follows_intersection_entry() {
        let eligible: BTreeSet<usize> = (0..4).collect();
        let r = Strategy::Lis.rank(&scores(), &eligible, 0);
        assert_eq!(r, vec![1, 2, 0, 3]);
        for m in 1..=4 {
            let s = select(&scores().c, &scores().h, m, &eligible);
            let prefix: BTreeSet<usize> = r.iter().take(s.len()).copied().collect();
            assert_eq!(prefix, s.ids);
        }
    }

    #[test]
    fn baselines_order() {
        let eligible: BTreeSet<usize> = (0..4).collect();
        assert_eq!(Strategy::Entropy.rank(&scores(), &eligible, 0), vec![1, 2, 3, 0]);
        assert_eq!(Strategy::Margin.rank(&scores(), &eligible, 0), vec![1, 2, 3, 0]);
        assert_eq!(Strategy::Confidence.rank(&scores(), &eligible, 0), vec![1, 2, 3, 0]);
        let r = Strategy::Random.rank(&scores(), &eligible, 5);
        assert_eq!(r, Strategy::Random.rank(&scores(), &eligible, 5));
        let mut sorted = r.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn parse_names() {
        assert_eq!("LIS".parse::<Strategy>().unwrap(), Strategy::Lis);
        assert!("nope".parse::<Strategy>().is_err());
    }
}
