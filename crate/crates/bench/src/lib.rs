//! Benchmarks live in `benches/`; run them with `cargo bench -p so3fm-bench`.
