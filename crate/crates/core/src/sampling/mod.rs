//! Neighbour retrieval and sample selection.

mod knn;
mod lis;
mod strategy;

pub use knn::{build_knn, cosine_sim, NeighborIndex};
pub use lis::{entropy, local_inconsistency, select, soft_assign, LisScore, SelectionSet};
pub use strategy::Strategy;
