//! Criterion benchmarks for the hot numerical kernels live under `benches/`.
