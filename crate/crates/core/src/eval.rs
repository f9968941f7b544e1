//! Filtered ranking evaluation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_queries, Dataset, HyperFact, LpQuery, Split};
use crate::error::{HtkgError, Result};
use crate::model::{GraphContext, Model};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FilterKey {
    pub subject: usize,
    pub relation: usize,
    pub time: usize,
    /// Sorted `(relation, entity)` pairs; empty when qualifiers are not part of the key.
    pub qualifiers: Vec<(usize, usize)>,
}

/// Known true objects per query key.
#[derive(Debug, Clone, Default)]
pub struct FilterSet {
    with_qualifiers: bool,
    map: HashMap<FilterKey, HashSet<usize>>,
}

impl FilterSet {
    /// No filtering at all.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_facts<'a>(facts: impl IntoIterator<Item = &'a HyperFact>, with_qualifiers: bool) -> Self {
        let mut f = Self {
            with_qualifiers,
            map: HashMap::new(),
        };
        for x in facts {
            let key = f.key_parts(
                x.subject.0,
                x.relation.0,
                x.time.0,
                x.qualifiers.iter().map(|q| (q.relation.0, q.entity.0)),
            );
            f.map.entry(key).or_default().insert(x.object.0);
        }
        f
    }

    /// Filter over train ∪ valid ∪ test of an augmented dataset.
    pub fn build(ds: &Dataset, with_qualifiers: bool) -> Result<Self> {
        if !ds.is_augmented() {
            return Err(HtkgError::NotAugmented);
        }
        Ok(Self::from_facts(
            ds.train.iter().chain(&ds.valid).chain(&ds.test),
            with_qualifiers,
        ))
    }

    pub fn with_qualifiers(&self) -> bool {
        self.with_qualifiers
    }

    fn key_parts(&self, s: usize, r: usize, t: usize, quals: impl Iterator<Item = (usize, usize)>) -> FilterKey {
        let mut qualifiers: Vec<(usize, usize)> = if self.with_qualifiers {
            quals.collect()
        } else {
            Vec::new()
        };
        qualifiers.sort_unstable();
        FilterKey {
            subject: s,
            relation: r,
            time: t,
            qualifiers,
        }
    }

    pub fn key(&self, q: &LpQuery) -> FilterKey {
        self.key_parts(
            q.subject.0,
            q.relation.0,
            q.time.0,
            q.qualifiers.iter().map(|x| (x.relation.0, x.entity.0)),
        )
    }

    pub fn insert(&mut self, key: FilterKey, object: usize) {
        self.map.entry(key).or_default().insert(object);
    }

    pub fn true_objects(&self, q: &LpQuery) -> Option<&HashSet<usize>> {
        self.map.get(&self.key(q))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Expected rank of the ground truth among unfiltered candidates:
/// `1 + #greater + #ties / 2`. Other known true objects are skipped.
pub fn filtered_rank(scores: &[f64], query: &LpQuery, filter: &FilterSet) -> Result<f64> {
    let truth = query.ground_truth.0;
    if truth >= scores.len() {
        return Err(HtkgError::CandidateOutOfRange(truth));
    }
    let known = filter.true_objects(query);
    if let Some(k) = known {
        if !k.contains(&truth) {
            return Err(HtkgError::TruthFiltered(truth));
        }
    }
    let st = scores[truth];
    let (mut greater, mut ties) = (0usize, 0usize);
    for (c, &v) in scores.iter().enumerate() {
        if c == truth || known.is_some_and(|k| k.contains(&c)) {
            continue;
        }
        if v > st {
            greater += 1;
        } else if v == st {
            ties += 1;
        }
    }
    Ok(1.0 + greater as f64 + ties as f64 / 2.0)
}

/// Hits@k for an expected rank (ties rounded up).
pub fn hit(rank: f64, k: usize) -> bool {
    rank.ceil() <= k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub split: String,
    pub ranks: Vec<f64>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl RankReport {
    pub fn from_ranks(split: impl Into<String>, ranks: Vec<f64>) -> Self {
        let n = ranks.len();
        let denom = n.max(1) as f64;
        let frac = |k| ranks.iter().filter(|&&r| hit(r, k)).count() as f64 / denom;
        Self {
            split: split.into(),
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / denom,
            hits1: frac(1),
            hits3: frac(3),
            hits10: frac(10),
            n_queries: n,
            ranks,
        }
    }

    /// Report object; `per_query` adds `{query, rank}` records named via `ds`.
    pub fn to_json(&self, per_query: Option<(&[LpQuery], &Dataset)>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "split": self.split,
            "mrr": self.mrr,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
            "n_queries": self.n_queries,
        });
        if let Some((queries, ds)) = per_query {
            let rows: Vec<serde_json::Value> = queries
                .iter()
                .zip(&self.ranks)
                .map(|(q, r)| {
                    serde_json::json!({
                        "query": {
                            "subject": ds.entity_name(q.subject),
                            "relation": ds.relation_name(q.relation),
                            "time": ds.times.value(q.time.0),
                            "qualifiers": q.qualifiers.iter()
                                .map(|x| [ds.relation_name(x.relation), ds.entity_name(x.entity).to_string()])
                                .collect::<Vec<_>>(),
                            "answer": ds.entity_name(q.ground_truth),
                        },
                        "rank": r,
                    })
                })
                .collect();
            v["per_query"] = serde_json::Value::Array(rows);
        }
        v
    }

    /// Fixed-width table with one row per report.
    pub fn table(rows: &[(&str, &RankReport)]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}",
            "Model", "MRR", "Hits@1", "Hits@3", "Hits@10", "Queries"
        );
        for (name, r) in rows {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10}",
                name, r.mrr, r.hits1, r.hits3, r.hits10, r.n_queries
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub filter_qualifiers: bool,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub batch_size: usize,
    /// Seed for neighbor sampling during encoding.
    pub seed: u64,
    /// Evaluate only the first `n` queries.
    pub max_queries: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            filter_qualifiers: true,
            workers: 0,
            batch_size: 256,
            seed: 0,
            max_queries: None,
        }
    }
}

/// Ranks `queries` with a batch scorer, sharded across workers. The output
/// order follows `queries` regardless of sharding.
pub fn rank_queries<F>(
    queries: &[LpQuery],
    filter: &FilterSet,
    batch_size: usize,
    workers: usize,
    scorer: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[LpQuery]) -> Matrix + Sync,
{
    let run = || -> Result<Vec<f64>> {
        let chunks: Vec<Result<Vec<f64>>> = queries
            .par_chunks(batch_size.max(1))
            .map(|chunk| {
                let scores = scorer(chunk);
                chunk
                    .iter()
                    .enumerate()
                    .map(|(i, q)| filtered_rank(scores.row(i), q, filter))
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(queries.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    };
    if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HtkgError::Invalid(format!("thread pool: {e}")))?
            .install(run)
    }
}

/// Filtered evaluation of `model` on one split of an augmented dataset.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    ctx: &GraphContext,
    split: Split,
    opts: &EvalOptions,
) -> Result<(RankReport, Vec<LpQuery>)> {
    let filter = FilterSet::build(ds, opts.filter_qualifiers)?;
    let mut queries = derive_queries(ds.split(split));
    if let Some(n) = opts.max_queries {
        queries.truncate(n);
    }
    let reps = model.encode_eval(ctx, opts.seed);
    let ranks = rank_queries(&queries, &filter, opts.batch_size, opts.workers, |chunk| {
        model.score_eval(ctx, &reps, chunk)
    })?;
    Ok((RankReport::from_ranks(split.name(), ranks), queries))
}
