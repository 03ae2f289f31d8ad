//! Criterion benchmarks for `blockloc-core`; see `benches/`.
