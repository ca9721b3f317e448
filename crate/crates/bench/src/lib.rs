//! Criterion benchmarks for milkit; see `benches/`.
