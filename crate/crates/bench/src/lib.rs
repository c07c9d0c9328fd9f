//! Criterion benchmarks for the `posbias` hot paths. See `benches/`.
