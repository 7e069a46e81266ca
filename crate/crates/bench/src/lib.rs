//! Benchmarks for `ccplan-core`; see `benches/planning.rs`.
