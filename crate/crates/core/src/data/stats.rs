use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Dataset;

/// Benchmark statistics in the layout of the usual dataset table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Entities appearing as subject or object of a primary quadruple.
    pub n_entities_pri: usize,
    /// Entities appearing only in qualifiers.
    pub n_entities_qual: usize,
    pub n_relations_pri: usize,
    pub n_relations_qual: usize,
    pub n_timestamps: usize,
    pub n_facts_with_qual: usize,
    /// Mean qualifier count over facts with at least one qualifier.
    pub avg_quals_per_qual_fact: f64,
    /// False when no fact has a qualifier (the average is then reported as 0).
    pub avg_defined: bool,
    /// `n_facts_with_qual` over the inverse-augmented fact count
    /// `2 * (n_train + n_valid + n_test)`, in percent.
    pub qual_percent: f64,
    /// `n_facts_with_qual / (n_train + n_valid + n_test)`, as a fraction.
    pub qual_fraction_raw: f64,
    pub n_ti_facts: usize,
    pub n_ti_entities: usize,
}

pub fn compute_stats(ds: &Dataset) -> DatasetStats {
    // count only the original half when augmented
    let base = |v: &[super::HyperFact]| -> usize {
        if ds.is_augmented() {
            v.len() / 2
        } else {
            v.len()
        }
    };
    let (n_train, n_valid, n_test) = (base(&ds.train), base(&ds.valid), base(&ds.test));
    let facts = ds.train[..n_train]
        .iter()
        .chain(&ds.valid[..n_valid])
        .chain(&ds.test[..n_test]);

    let mut ent_pri = HashSet::new();
    let mut ent_q = HashSet::new();
    let mut rel_pri = HashSet::new();
    let mut rel_q = HashSet::new();
    let mut times = HashSet::new();
    let mut n_qual_facts = 0usize;
    let mut n_quals = 0usize;
    for f in facts {
        ent_pri.insert(f.subject);
        ent_pri.insert(f.object);
        rel_pri.insert(f.relation);
        times.insert(f.time);
        if f.has_qualifiers() {
            n_qual_facts += 1;
            n_quals += f.qualifiers.len();
        }
        for q in &f.qualifiers {
            ent_q.insert(q.entity);
            rel_q.insert(q.relation);
        }
    }
    let total = n_train + n_valid + n_test;
    let avg_defined = n_qual_facts > 0;
    DatasetStats {
        n_train,
        n_valid,
        n_test,
        n_entities_pri: ent_pri.len(),
        n_entities_qual: ent_q.difference(&ent_pri).count(),
        n_relations_pri: rel_pri.len(),
        n_relations_qual: rel_q.difference(&rel_pri).count(),
        n_timestamps: times.len(),
        n_facts_with_qual: n_qual_facts,
        avg_quals_per_qual_fact: if avg_defined {
            n_quals as f64 / n_qual_facts as f64
        } else {
            0.0
        },
        avg_defined,
        qual_percent: if total > 0 {
            100.0 * n_qual_facts as f64 / (2 * total) as f64
        } else {
            0.0
        },
        qual_fraction_raw: if total > 0 {
            n_qual_facts as f64 / total as f64
        } else {
            0.0
        },
        n_ti_facts: ds.ti_facts.len(),
        n_ti_entities: ds.ti_entities.len(),
    }
}

impl DatasetStats {
    /// Flat `key=value` listing, one field per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_train={}", self.n_train);
        let _ = writeln!(s, "n_valid={}", self.n_valid);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "n_entities_pri={}", self.n_entities_pri);
        let _ = writeln!(s, "n_entities_qual={}", self.n_entities_qual);
        let _ = writeln!(s, "n_relations_pri={}", self.n_relations_pri);
        let _ = writeln!(s, "n_relations_qual={}", self.n_relations_qual);
        let _ = writeln!(s, "n_timestamps={}", self.n_timestamps);
        let _ = writeln!(s, "n_facts_with_qual={}", self.n_facts_with_qual);
        let _ = writeln!(s, "avg_quals_per_qual_fact={:.2}", self.avg_quals_per_qual_fact);
        let _ = writeln!(s, "avg_defined={}", self.avg_defined);
        let _ = writeln!(s, "qual_percent={:.2}", self.qual_percent);
        let _ = writeln!(s, "qual_fraction_raw={:.4}", self.qual_fraction_raw);
        let _ = writeln!(s, "n_ti_facts={}", self.n_ti_facts);
        let _ = writeln!(s, "n_ti_entities={}", self.n_ti_entities);
        s
    }
}
