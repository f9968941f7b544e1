//! Small random HTKGs for smoke runs and gradient checks.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RawFact, RawTiFact};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub facts: usize,
    pub relations: usize,
    pub qualifier_relations: usize,
    pub times: i64,
    /// Probability that a fact carries qualifiers (1 to 3 pairs).
    pub qualified: f64,
    pub ti_facts: usize,
    pub ti_only_entities: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities: 10,
            facts: 15,
            relations: 3,
            qualifier_relations: 2,
            times: 5,
            qualified: 0.6,
            ti_facts: 6,
            ti_only_entities: 2,
            seed: 7,
        }
    }
}

/// Raw train facts and TI facts. Every entity occurs as a subject or object.
pub fn synthetic_facts(spec: &SyntheticSpec) -> (Vec<RawFact>, Vec<RawTiFact>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = |i: usize| format!("e{i}");
    let mut seen = HashSet::new();
    let mut facts = Vec::with_capacity(spec.facts);
    while facts.len() < spec.facts {
        let k = facts.len();
        // first pass walks every entity so none is missing
        let s = if k < spec.entities {
            k
        } else {
            rng.random_range(0..spec.entities)
        };
        let mut o = rng.random_range(0..spec.entities);
        if o == s {
            o = (o + 1) % spec.entities;
        }
        let r = rng.random_range(0..spec.relations);
        let t = rng.random_range(0..spec.times);
        if !seen.insert((s, r, o, t)) {
            continue;
        }
        let mut qualifiers = Vec::new();
        if rng.random_bool(spec.qualified) {
            for _ in 0..rng.random_range(1..=3) {
                qualifiers.push((
                    format!("q{}", rng.random_range(0..spec.qualifier_relations)),
                    e(rng.random_range(0..spec.entities)),
                ));
            }
        }
        facts.push(RawFact {
            subject: e(s),
            relation: format!("r{r}"),
            object: e(o),
            time: 2000 + t,
            qualifiers,
        });
    }
    let mut ti = Vec::new();
    let mut ti_seen = HashSet::new();
    while ti.len() < spec.ti_facts {
        let s = e(rng.random_range(0..spec.entities));
        let o = if spec.ti_only_entities > 0 && rng.random_bool(0.5) {
            format!("x{}", rng.random_range(0..spec.ti_only_entities))
        } else {
            e(rng.random_range(0..spec.entities))
        };
        let f = RawTiFact {
            subject: s,
            relation: format!("ti{}", rng.random_range(0..2)),
            object: o,
        };
        if ti_seen.insert(f.clone()) {
            ti.push(f);
        }
    }
    (facts, ti)
}
