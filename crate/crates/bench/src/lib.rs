//! Benchmarks for the filtering backends and full refinement live in `benches/`.
