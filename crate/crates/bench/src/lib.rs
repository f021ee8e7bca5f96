//! Criterion benchmarks for demix-core live under `benches/`.
