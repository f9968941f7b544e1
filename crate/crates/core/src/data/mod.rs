//! Hyper-relational temporal knowledge graph data model.
//!
//! A fact is a primary quadruple `(s, r, o, t)` plus an ordered list of
//! `(relation, entity)` qualifier pairs. Entity, relation and time ids index
//! into the vocabularies held by [`Dataset`].

mod index;
mod io;
mod sample;
mod stats;
mod synthetic;
mod vocab;

pub use index::{
    build_subject_qualifier_index, build_temporal_index, build_ti_index, SubjectQualifierIndex, TemporalNeighbor,
    TemporalNeighborIndex, TiNeighbor, TiNeighborIndex,
};
pub use io::{
    dataset_from_raw, format_fact, load_dataset, parse_fact_file, parse_ti_file, write_dataset, write_fact_file,
    LoadOptions, RawFact, RawTiFact,
};
pub use sample::{sample_proportion_dataset, subsample_qualifiers, ProportionTarget};
pub use stats::{compute_stats, DatasetStats};
pub use synthetic::{synthetic_facts, SyntheticSpec};
pub use vocab::{TimeVocab, Vocab};

use serde::{Deserialize, Serialize};

use crate::error::{HtkgError, Result};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }
    };
}

id_type!(
    /// Global entity id. HTKG entities come first; TI-only entities follow.
    EntityId
);
id_type!(
    /// HTKG relation id. After inverse augmentation the inverse of base
    /// relation `k` is `k + n_base`.
    RelationId
);
id_type!(TimeId);
id_type!(
    /// Relation id in the TI relation vocabulary (disjoint from HTKG relations).
    TiRelationId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Qualifier {
    pub relation: RelationId,
    pub entity: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperFact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: TimeId,
    pub qualifiers: Vec<Qualifier>,
}

impl HyperFact {
    pub fn has_qualifiers(&self) -> bool {
        !self.qualifiers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TiFact {
    pub subject: EntityId,
    pub relation: TiRelationId,
    pub object: EntityId,
}

/// An object-prediction query `((s, r, ?, t), Q)` with its answer retained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpQuery {
    pub subject: EntityId,
    pub relation: RelationId,
    pub time: TimeId,
    pub qualifiers: Vec<Qualifier>,
    pub ground_truth: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = HtkgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(HtkgError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// A loaded HTKG benchmark with vocabularies and TI facts.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<HyperFact>,
    pub valid: Vec<HyperFact>,
    pub test: Vec<HyperFact>,
    pub ti_facts: Vec<TiFact>,
    /// HTKG entities (primary and qualifier).
    pub entities: Vocab,
    /// Base HTKG relations (primary and qualifier), without inverses.
    pub relations: Vocab,
    pub times: TimeVocab,
    /// Entities only reachable through TI facts; global id is `entities.len() + local`.
    pub ti_entities: Vocab,
    pub ti_relations: Vocab,
    augmented: bool,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        train: Vec<HyperFact>,
        valid: Vec<HyperFact>,
        test: Vec<HyperFact>,
        ti_facts: Vec<TiFact>,
        entities: Vocab,
        relations: Vocab,
        times: TimeVocab,
        ti_entities: Vocab,
        ti_relations: Vocab,
    ) -> Self {
        Self {
            train,
            valid,
            test,
            ti_facts,
            entities,
            relations,
            times,
            ti_entities,
            ti_relations,
            augmented: false,
        }
    }

    pub fn split(&self, split: Split) -> &[HyperFact] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Number of HTKG entities; these are the ranking candidates.
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// HTKG plus TI-only entities.
    pub fn num_all_entities(&self) -> usize {
        self.entities.len() + self.ti_entities.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relation id space size: doubled after augmentation.
    pub fn num_relations(&self) -> usize {
        if self.augmented {
            2 * self.relations.len()
        } else {
            self.relations.len()
        }
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn num_ti_relations(&self) -> usize {
        self.ti_relations.len()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        let n = self.entities.len();
        if id.0 < n {
            self.entities.name(id.0)
        } else {
            self.ti_entities.name(id.0 - n)
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities
            .get(name)
            .or_else(|| self.ti_entities.get(name).map(|i| i + self.entities.len()))
            .map(EntityId)
    }

    /// Relation label; inverse relations get a `_inverse` suffix.
    pub fn relation_name(&self, id: RelationId) -> String {
        let n = self.relations.len();
        if id.0 < n {
            self.relations.name(id.0).to_string()
        } else {
            format!("{}_inverse", self.relations.name(id.0 - n))
        }
    }

    pub fn inverse_of(&self, id: RelationId) -> RelationId {
        let n = self.relations.len();
        if id.0 < n {
            RelationId(id.0 + n)
        } else {
            RelationId(id.0 - n)
        }
    }

    /// Adds `((o, r⁻¹, s, t), Q)` for every fact of every split.
    ///
    /// Inverse facts are appended after the originals so fact `i` and
    /// `i + n` form a pair. Qualifiers are copied verbatim.
    pub fn augment_inverse(mut self) -> Result<Self> {
        if self.augmented {
            return Err(HtkgError::AlreadyAugmented);
        }
        let n_rel = self.relations.len();
        for split in [&mut self.train, &mut self.valid, &mut self.test] {
            let inverses: Vec<HyperFact> = split
                .iter()
                .map(|f| HyperFact {
                    subject: f.object,
                    relation: RelationId(f.relation.0 + n_rel),
                    object: f.subject,
                    time: f.time,
                    qualifiers: f.qualifiers.clone(),
                })
                .collect();
            split.extend(inverses);
        }
        self.augmented = true;
        Ok(self)
    }
}

/// One object-prediction query per (augmented) fact.
pub fn derive_queries(split: &[HyperFact]) -> Vec<LpQuery> {
    split
        .iter()
        .map(|f| LpQuery {
            subject: f.subject,
            relation: f.relation,
            time: f.time,
            qualifiers: f.qualifiers.clone(),
            ground_truth: f.object,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let raw = vec![RawFact {
            subject: "a".into(),
            relation: "r".into(),
            object: "b".into(),
            time: 2000,
            qualifiers: vec![("q1".into(), "x".into()), ("q2".into(), "y".into())],
        }];
        io::dataset_from_raw(raw, vec![], vec![], vec![]).unwrap()
    }

    #[test]
    fn single_fact_augmentation() {
        let ds = toy();
        // relations: r, q1, q2
        assert_eq!(ds.num_base_relations(), 3);
        let aug = ds.augment_inverse().unwrap();
        assert_eq!(aug.train.len(), 2);
        let inv = &aug.train[1];
        assert_eq!(inv.relation, RelationId(3));
        assert_eq!(inv.subject, aug.train[0].object);
        assert_eq!(inv.object, aug.train[0].subject);
        assert_eq!(inv.qualifiers, aug.train[0].qualifiers);
        assert_eq!(aug.num_relations(), 6);
        assert_eq!(aug.relation_name(RelationId(3)), "r_inverse");
        assert_eq!(aug.inverse_of(RelationId(3)), RelationId(0));
    }

    #[test]
    fn double_augmentation_rejected() {
        let aug = toy().augment_inverse().unwrap();
        assert!(matches!(aug.augment_inverse(), Err(HtkgError::AlreadyAugmented)));
    }

    #[test]
    fn queries_from_fact_and_inverse() {
        let aug = toy().augment_inverse().unwrap();
        let qs = derive_queries(&aug.train);
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].ground_truth, aug.train[0].object);
        assert_eq!(qs[1].ground_truth, aug.train[0].subject);
        assert_eq!(qs[0].qualifiers.len(), 2);
    }

    #[test]
    fn empty_qualifiers_give_empty_query_qualifiers() {
        let f = HyperFact {
            subject: EntityId(0),
            relation: RelationId(0),
            object: EntityId(1),
            time: TimeId(0),
            qualifiers: vec![],
        };
        let q = derive_queries(&[f]);
        assert!(q[0].qualifiers.is_empty());
    }
}
