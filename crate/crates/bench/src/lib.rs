//! Criterion benchmarks for the core crate live under `benches/`.
