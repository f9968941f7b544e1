//! Shared workloads for the criterion benches.

use htkg_core::data::{dataset_from_raw, derive_queries, synthetic_facts, SyntheticSpec};
use htkg_core::model::GraphContext;
use htkg_core::{Dataset, LpQuery, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A synthetic graph with a model built for it.
pub struct Workload {
    pub ds: Dataset,
    pub model: Model,
    pub ctx: GraphContext,
    pub queries: Vec<LpQuery>,
}

impl Workload {
    /// `entities` entities, `4 × entities` facts, embedding width `dim`.
    pub fn new(entities: usize, dim: usize, use_ti: bool) -> Self {
        let spec = SyntheticSpec {
            entities,
            facts: 4 * entities,
            relations: 8,
            qualifier_relations: 4,
            times: 20,
            qualified: 0.3,
            ti_facts: if use_ti { entities } else { 0 },
            ti_only_entities: if use_ti { entities / 10 } else { 0 },
            seed: 1,
        };
        let (facts, ti) = synthetic_facts(&spec);
        let ds = dataset_from_raw(facts, vec![], vec![], ti)
            .and_then(|d| d.augment_inverse())
            .expect("synthetic dataset");
        let mut cfg = ModelConfig {
            dim,
            dropout: 0.0,
            use_ti,
            ..ModelConfig::default()
        };
        cfg.decoder.heads = 2;
        let model = Model::for_dataset(cfg.clone(), &ds, &mut ChaCha8Rng::seed_from_u64(2)).expect("model");
        let ctx = GraphContext::from_dataset(&ds, &cfg).expect("context");
        let queries = derive_queries(&ds.train);
        Self {
            ds,
            model,
            ctx,
            queries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_has_every_entity_and_both_directions() {
        let w = Workload::new(30, 8, true);
        assert_eq!(w.ds.num_entities(), 30);
        assert_eq!(w.queries.len(), 2 * 120);
        assert!(w.ds.num_ti_relations() > 0);
    }
}
