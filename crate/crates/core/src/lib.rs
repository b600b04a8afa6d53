//! Generalized category discovery with an LLM in the loop.
//!
//! A projection head over precomputed sentence embeddings is trained with a supervised
//! cross-entropy term and a neighbourhood contrastive term. Every few epochs the
//! embeddings are re-clustered, locally inconsistent samples are picked, and an oracle
//! (a mock, or an OpenAI-compatible chat endpoint) chooses which candidate neighbour
//! really shares the query's category. Novel clusters are finally named by the oracle.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the `*64` / `*32` aliases below
//! fix the precision.

pub mod clustering;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod interpretation;
pub mod oracle;
pub mod pipeline;
pub mod sampling;
pub mod scalar;
pub mod training;
pub mod util;

pub use clustering::{estimate_k, kmeans, kmeans_best_of, lloyd, ClusterModel, KMeansParams};
pub use data::{load_jsonl, make_gcd_split, DatasetBundle, EmbeddedSample, Split, SyntheticConfig};
pub use error::{Error, ErrorCategory, Result};
pub use evaluation::{evaluate, h_score, hungarian, wrong_cluster_rate, EvalReport};
pub use experiments::{bench_samplers, discovery_preset, BenchConfig, BenchReport, BenchRow};
pub use interpretation::{decouple_novel, name_clusters, representatives, InterpretationResult};
pub use oracle::{Answer, CacheStore, LiveOracle, LiveOracleConfig, MockBehavior, MockOracle, Oracle};
pub use pipeline::{run_pipeline, PipelineConfig, RunReport};
pub use sampling::{build_knn, LisScore, NeighborIndex, SelectionSet, Strategy};
pub use scalar::Scalar;
pub use training::{run_loop, LoopReport, ProjectionHead, TrainConfig};

pub type ClusterModel64 = ClusterModel<f64>;
pub type ClusterModel32 = ClusterModel<f32>;
pub type NeighborIndex64 = NeighborIndex<f64>;
pub type NeighborIndex32 = NeighborIndex<f32>;
pub type LisScore64 = LisScore<f64>;
pub type LisScore32 = LisScore<f32>;
pub type ProjectionHead64 = ProjectionHead<f64>;
pub type ProjectionHead32 = ProjectionHead<f32>;
