//! Fixtures shared by the criterion benchmarks in `benches/`.

use std::sync::Arc;

use wargame_core::data::generate_blobs;
use wargame_core::zoo::init_model;
use wargame_core::{Dataset, DefensePool, Model, ModelSpec};

/// 10-class, 64-feature blob set.
pub fn blobs() -> Dataset {
    generate_blobs(10, 64, 20, 0.7, 0.03, 1).expect("valid blob parameters")
}

/// Untrained 64-64-10 dense net; timing does not depend on the weights.
pub fn mlp(seed: u64) -> Model {
    init_model(ModelSpec::mlp(format!("bench{seed}"), 64, &[64], 10), seed).expect("valid spec")
}

pub fn pool(size: usize) -> DefensePool {
    DefensePool::new((0..size as u64).map(|s| Arc::new(mlp(s))).collect()).expect("compatible models")
}
