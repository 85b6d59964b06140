//! Criterion benchmarks for the core hot paths live under `benches/`.
