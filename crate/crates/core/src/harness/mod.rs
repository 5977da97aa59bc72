//! Benchmark harness: datasets, metrics, the synthetic corpus and
//! benchmark, sweep and ablation runs.

pub mod bench;
pub mod corpus;
pub mod dataset;
pub mod metrics;

pub use bench::{run_ablation, run_benchmark, sweep, BenchData, BenchRun, SweepParam, SweepRow};
pub use corpus::{generate_synthetic_corpus, Pattern, SyntheticCorpus, TruthRecord};
pub use dataset::{load_dataset, parse_dataset, Dataset};
pub use metrics::{aggregate, auroc, localisation, prf1, MetricsReport};
