//! Benchmarks for the pruning engine live under `benches/`.
