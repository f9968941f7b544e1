//! Neighbor indexes over the observed graph.

use super::{EntityId, HyperFact, Qualifier, RelationId, TiFact, TiRelationId, TimeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalNeighbor {
    pub subject: EntityId,
    pub relation: RelationId,
    pub time: TimeId,
    pub qualifiers: Vec<Qualifier>,
}

/// For each entity `e`, the facts `((e', r', e, t'), Q)` in file order.
#[derive(Debug, Clone, Default)]
pub struct TemporalNeighborIndex {
    lists: Vec<Vec<TemporalNeighbor>>,
}

impl TemporalNeighborIndex {
    pub fn neighbors(&self, e: EntityId) -> &[TemporalNeighbor] {
        self.lists.get(e.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn num_entities(&self) -> usize {
        self.lists.len()
    }

    /// Copy with every timestamp remapped through `perm` (time ablation checks).
    pub fn with_times_permuted(&self, perm: &[usize]) -> Self {
        let lists = self
            .lists
            .iter()
            .map(|l| {
                l.iter()
                    .map(|n| TemporalNeighbor {
                        time: TimeId(perm[n.time.0]),
                        ..n.clone()
                    })
                    .collect()
            })
            .collect();
        Self { lists }
    }
}

/// Indexes `facts` by object. `num_entities` sizes the table (ids beyond the
/// facts simply have no neighbors).
pub fn build_temporal_index(facts: &[HyperFact], num_entities: usize) -> TemporalNeighborIndex {
    let n = facts
        .iter()
        .map(|f| f.object.0 + 1)
        .max()
        .unwrap_or(0)
        .max(num_entities);
    let mut lists = vec![Vec::new(); n];
    for f in facts {
        lists[f.object.0].push(TemporalNeighbor {
            subject: f.subject,
            relation: f.relation,
            time: f.time,
            qualifiers: f.qualifiers.clone(),
        });
    }
    TemporalNeighborIndex { lists }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TiNeighbor {
    pub subject: EntityId,
    /// TI relation id; values `>= n_ti_relations` denote inverse TI relations.
    pub relation: TiRelationId,
}

/// For each entity `e`, the pairs `(e'', r'')` with `(e'', r'', e)` in the TI graph.
#[derive(Debug, Clone, Default)]
pub struct TiNeighborIndex {
    lists: Vec<Vec<TiNeighbor>>,
}

impl TiNeighborIndex {
    pub fn neighbors(&self, e: EntityId) -> &[TiNeighbor] {
        self.lists.get(e.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Builds the TI index. With `with_inverse`, each `(s, r, o)` also yields
/// `(o, r⁻¹, s)` where `r⁻¹ = r + n_ti_relations`.
pub fn build_ti_index(
    facts: &[TiFact],
    num_entities: usize,
    n_ti_relations: usize,
    with_inverse: bool,
) -> TiNeighborIndex {
    let n = facts
        .iter()
        .map(|f| f.subject.0.max(f.object.0) + 1)
        .max()
        .unwrap_or(0)
        .max(num_entities);
    let mut lists = vec![Vec::new(); n];
    for f in facts {
        lists[f.object.0].push(TiNeighbor {
            subject: f.subject,
            relation: f.relation,
        });
    }
    if with_inverse {
        for f in facts {
            lists[f.subject.0].push(TiNeighbor {
                subject: f.object,
                relation: TiRelationId(f.relation.0 + n_ti_relations),
            });
        }
    }
    TiNeighborIndex { lists }
}

/// Qualifiers of all observed facts grouped by primary subject, most recent
/// fact first (ties in file order), capped at `max_per_subject`.
#[derive(Debug, Clone, Default)]
pub struct SubjectQualifierIndex {
    lists: Vec<Vec<Qualifier>>,
}

impl SubjectQualifierIndex {
    pub fn qualifiers(&self, s: EntityId) -> &[Qualifier] {
        self.lists.get(s.0).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn build_subject_qualifier_index(
    facts: &[HyperFact],
    num_entities: usize,
    max_per_subject: usize,
) -> SubjectQualifierIndex {
    let n = facts
        .iter()
        .map(|f| f.subject.0 + 1)
        .max()
        .unwrap_or(0)
        .max(num_entities);
    let mut by_subject: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, f) in facts.iter().enumerate() {
        if f.has_qualifiers() {
            by_subject[f.subject.0].push(i);
        }
    }
    let lists = by_subject
        .into_iter()
        .map(|mut idx| {
            // stable: equal times keep file order
            idx.sort_by(|&a, &b| facts[b].time.cmp(&facts[a].time));
            idx.iter()
                .flat_map(|&i| facts[i].qualifiers.iter().copied())
                .take(max_per_subject)
                .collect()
        })
        .collect();
    SubjectQualifierIndex { lists }
}
