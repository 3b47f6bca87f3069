//! Criterion benchmarks for rankbench live under `benches/`.
