//! Synthetic HTKGs shared by the integration tests.
#![allow(dead_code)]

use htkg_core::data::dataset_from_raw;
pub use htkg_core::data::{synthetic_facts as toy_raw, SyntheticSpec as ToySpec};
use htkg_core::model::GraphContext;
use htkg_core::{Dataset, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Augmented dataset with all facts in train.
pub fn toy_dataset(spec: &ToySpec) -> Dataset {
    let (facts, ti) = toy_raw(spec);
    dataset_from_raw(facts, vec![], vec![], ti)
        .unwrap()
        .augment_inverse()
        .unwrap()
}

pub fn small_config(dim: usize) -> ModelConfig {
    let mut c = ModelConfig {
        dim,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    c.decoder.heads = 2;
    c
}

pub fn build(cfg: &ModelConfig, ds: &Dataset, seed: u64) -> (Model, GraphContext) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Model::for_dataset(cfg.clone(), ds, &mut rng).unwrap();
    let ctx = GraphContext::from_dataset(ds, cfg).unwrap();
    (m, ctx)
}
