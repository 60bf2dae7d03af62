//! Criterion benchmarks for the selectors and end-to-end classification.
//!
//! Run with `cargo bench -p flowknn-bench`.
