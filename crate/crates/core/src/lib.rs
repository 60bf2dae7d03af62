//! Network-flow KNN classification with instrumented neighbor selection.
//!
//! The pipeline runs packet records through tumbling flow windows
//! ([`flowfeat`]), turns each window into a six-dimensional feature vector,
//! and classifies vectors with a Manhattan-distance KNN ([`knn`]). The
//! k-nearest step is pluggable: five [`selectors`] (single-pass K-Min plus
//! bubble, merge, odd-even and enumeration sorts) return the same neighbor
//! multiset while counting every comparison, element read and element write.
//! [`dataset`] handles splitting, cross-validation folds and a synthetic
//! traffic generator; [`eval`] runs k tuning, accuracy evaluation and the
//! selector benchmark.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod flowfeat;
pub mod knn;
pub mod selectors;

mod fmt;

pub use dataset::{
    kfold_assign, split, synth_generate, ClassLabel, Dataset, FoldAssignment, LabelId, LabelTable,
    LabeledSample, SplitSpec, SynthConfig,
};
pub use error::{Error, Result};
pub use eval::{
    bench_selectors, evaluate, tune_k, BenchConfig, BenchReport, Evaluation, TuneResult,
};
pub use flowfeat::{
    extract_features, ingest_packets, windowize, Direction, FeatureRecord, FeatureVector,
    FlowWindow, IngestMode, IngestOutcome, PacketMeta, Protocol, DEFAULT_WINDOW_LENGTH,
};
pub use knn::{classify, manhattan, mode_with_tiebreak, Classification, Distance, KnnConfig};
pub use selectors::{
    select, Candidate, ExecMode, Neighbor, NeighborSet, SelectionStats, SelectorKind,
};
