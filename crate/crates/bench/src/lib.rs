//! Criterion benchmarks for the adaptation hot paths; see `benches/`.
