//! Ground-truth oracle for LLM-free experiments.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{ChoiceQuery, NameQuery, Oracle};
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::scalar::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockBehavior {
    /// Falls back to the candidate most similar to the query.
    Ideal,
    /// Falls back to a pseudo-random candidate derived from the query content.
    Noisy { seed: u64 },
}

/// Answers with the candidate sharing the query's true label.
#[derive(Debug, Clone)]
pub struct MockOracle {
    labels: Vec<Option<usize>>,
    vectors: Vec<Vec<f64>>,
    label_names: BTreeMap<usize, String>,
    behavior: MockBehavior,
}

impl MockOracle {
    pub fn new(bundle: &DatasetBundle, behavior: MockBehavior) -> Self {
        Self {
            labels: bundle.labels(),
            vectors: bundle.samples.iter().map(|s| s.vector.clone()).collect(),
            label_names: BTreeMap::new(),
            behavior,
        }
    }

    pub fn with_label_names(mut self, names: BTreeMap<usize, String>) -> Self {
        self.label_names = names;
        self
    }

    fn label_of(&self, id: usize) -> Result<Option<usize>> {
        self.labels
            .get(id)
            .copied()
            .ok_or_else(|| Error::Oracle(format!("mock oracle has no sample {id}")))
    }

    fn cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (&self.vectors[a], &self.vectors[b]);
        let n = (dot(x, x) * dot(y, y)).sqrt();
        if n > 0.0 {
            dot(x, y) / n
        } else {
            0.0
        }
    }

    pub fn name_for(&self, label: usize) -> String {
        self.label_names
            .get(&label)
            .cloned()
            .unwrap_or_else(|| format!("category {label}"))
    }
}

impl Oracle for MockOracle {
    fn complete_choice(&self, q: &ChoiceQuery<'_>) -> Result<String> {
        let truth = self.label_of(q.query_id)?;
        for (pos, &c) in q.candidate_ids.iter().enumerate() {
            if truth.is_some() && self.label_of(c)? == truth {
                return Ok(format!("Sentence {}", pos + 1));
            }
        }
        let pos = match self.behavior {
            MockBehavior::Ideal => {
                let mut best = (0, f64::NEG_INFINITY);
                for (pos, &c) in q.candidate_ids.iter().enumerate() {
                    let s = self.cosine(q.query_id, c);
                    if s > best.1 {
                        best = (pos, s);
                    }
                }
                best.0
            }
            MockBehavior::Noisy { seed } => {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update((q.query_id as u64).to_le_bytes());
                for &c in q.candidate_ids {
                    h.update((c as u64).to_le_bytes());
                }
                let d = h.finalize();
                let v = u64::from_le_bytes(d[..8].try_into().unwrap());
                (v % q.candidate_ids.len() as u64) as usize
            }
        };
        Ok(format!("Sentence {}", pos + 1))
    }

    /// Majority true label of the representatives, smallest label on ties.
    fn complete_name(&self, q: &NameQuery<'_>) -> Result<String> {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &id in q.sample_ids {
            if let Some(l) = self.label_of(id)? {
                *votes.entry(l).or_default() += 1;
            }
        }
        let best = votes
            .iter()
            .fold(None::<(usize, usize)>, |acc, (&l, &n)| match acc {
                Some((_, bn)) if bn >= n => acc,
                _ => Some((l, n)),
            })
            .ok_or_else(|| Error::Oracle("no labeled representative to name".into()))?;
        Ok(self.name_for(best.0))
    }
}
