//! Criterion benchmarks for the planner, scheduler and simulator live in
//! `benches/`.
