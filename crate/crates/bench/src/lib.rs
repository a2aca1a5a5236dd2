//! Criterion benchmarks for the rb-core network engine; see `benches/`.
