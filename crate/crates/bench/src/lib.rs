//! Criterion benchmarks for the GLRT objective, the velocity estimators and trial synthesis; see `benches/`.
