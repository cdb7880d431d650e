//! Criterion benchmarks in `benches/` and the acceptance suite in `tests/acceptance.rs`.
