//! Criterion benchmarks for the convolution variants and whole-model
//! inference; see `benches/kernels.rs`.
