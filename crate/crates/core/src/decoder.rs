//! Qualifier-matching decoder.
//!
//! For a query `((s, r, ?, t), Q)` three Transformers produce a query-qualifier
//! feature, a TI feature for `s`, and the final query feature from the token
//! sequence `[CLS], h_(s,t), h_r, h_Qual^que, h_Qual^glo (, h_TI)`. The global
//! qualifier feature attends over every qualifier of observed facts with
//! subject `s`. Scores are `(h_que ⊙ h_t)ᵀ W5 h_c` for every candidate `c`.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::data::{Dataset, EntityId, LpQuery, Qualifier, TiNeighbor};
use crate::encoder::{time_aware, time_encoding, EncoderParams};
use crate::error::{HtkgError, Result};
use crate::model::{uniform, GraphContext, ModelConfig, ModelSizes};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Segments, Var};
use crate::transformer::TransformerParams;

/// Additive type embeddings replacing positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum TokenType {
    Cls = 0,
    QualRelation,
    QualEntity,
    TiRelation,
    TiEntity,
    SubjectTime,
    Relation,
    QueryQualifiers,
    GlobalQualifiers,
    TiFeature,
}

pub const N_TOKEN_TYPES: usize = 10;

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub w3: ParamId,
    pub w4: ParamId,
    pub w5: ParamId,
    pub types: ParamId,
    pub qual_tf: TransformerParams,
    pub ti_tf: TransformerParams,
    pub query_tf: TransformerParams,
}

impl DecoderParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.dim;
        let b = 1.0 / (d as f64).sqrt();
        let dc = &cfg.decoder;
        Ok(Self {
            w3: store.add("dec.w3", uniform(rng, d, 2 * d, b))?,
            w4: store.add("dec.w4", uniform(rng, d, 2 * d, b))?,
            w5: store.add("dec.w5", uniform(rng, d, d, b))?,
            types: store.add("dec.types", uniform(rng, N_TOKEN_TYPES, d, b))?,
            qual_tf: TransformerParams::new(store, "dec.qual_tf", d, dc.tf_layers, dc.heads, dc.ffn_mult, rng)?,
            ti_tf: TransformerParams::new(store, "dec.ti_tf", d, dc.tf_layers, dc.heads, dc.ffn_mult, rng)?,
            query_tf: TransformerParams::new(store, "dec.query_tf", d, dc.tf_layers, dc.heads, dc.ffn_mult, rng)?,
        })
    }
}

/// Everything a decode pass exposes besides the score matrix.
pub struct DecodeOutput {
    /// `B × n_entities`.
    pub scores: Var,
    /// `B × d`.
    pub h_que: Var,
    /// `B × d`; `None` when time is off.
    pub h_t: Option<Var>,
    /// Matcher weights, one row per pooled qualifier, grouped by query.
    pub eta: Option<Var>,
    /// Subject-related qualifier pool per query.
    pub pools: Vec<Vec<Qualifier>>,
    /// TI neighbors fed to the TI-wise Transformer per query.
    pub ti_neighbors: Vec<Vec<TiNeighbor>>,
    /// Global qualifier feature, `B × d`.
    pub global: Var,
}

/// Runs `tf` over `[CLS] r1 e1 r2 e2 …` per sequence and returns the `[CLS]`
/// outputs (`B × d`).
#[allow(clippy::too_many_arguments)]
fn pair_transformer<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    tf: &TransformerParams,
    types: ParamId,
    rel_table: ParamId,
    reps: Var,
    seqs: &[Vec<(usize, usize)>],
    kinds: (TokenType, TokenType),
    dropout: f64,
    rng: &mut R,
) -> Var {
    let b = seqs.len();
    let rels: Vec<usize> = seqs.iter().flatten().map(|p| p.0).collect();
    let ents: Vec<usize> = seqs.iter().flatten().map(|p| p.1).collect();
    let n_pairs = rels.len();
    let mut parts = vec![tf.cls_rows(g, store, b)];
    if n_pairs > 0 {
        parts.push(g.gather_param(store, rel_table, &rels));
        parts.push(g.gather_rows(reps, &ents));
    }
    let pool = g.concat_rows(&parts);
    let (mut order, mut kind, mut segs, mut starts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut p = 0;
    for (i, s) in seqs.iter().enumerate() {
        starts.push(order.len());
        segs.push((order.len(), 1 + 2 * s.len()));
        order.push(i);
        kind.push(TokenType::Cls as usize);
        for _ in s {
            order.push(b + p);
            order.push(b + n_pairs + p);
            kind.push(kinds.0 as usize);
            kind.push(kinds.1 as usize);
            p += 1;
        }
    }
    let tokens = g.gather_rows(pool, &order);
    let te = g.gather_param(store, types, &kind);
    let x = g.add(tokens, te);
    let out = tf.forward(g, store, x, Arc::new(segs), dropout, rng);
    g.gather_rows(out.hidden, &starts)
}

/// Query-qualifier feature per query from the qualifier-wise Transformer.
#[allow(clippy::too_many_arguments)]
pub fn encode_query_qualifiers<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    enc: &EncoderParams,
    dec: &DecoderParams,
    cfg: &ModelConfig,
    reps: Var,
    queries: &[LpQuery],
    rng: &mut R,
) -> Var {
    let seqs: Vec<Vec<(usize, usize)>> = queries
        .iter()
        .map(|q| q.qualifiers.iter().map(|x| (x.relation.0, x.entity.0)).collect())
        .collect();
    pair_transformer(
        g,
        store,
        &dec.qual_tf,
        dec.types,
        enc.relation,
        reps,
        &seqs,
        (TokenType::QualRelation, TokenType::QualEntity),
        cfg.dropout,
        rng,
    )
}

/// TI feature per query subject from the TI-wise Transformer.
#[allow(clippy::too_many_arguments)]
pub fn encode_ti_feature<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    enc: &EncoderParams,
    dec: &DecoderParams,
    cfg: &ModelConfig,
    reps: Var,
    neighbors: &[Vec<TiNeighbor>],
    rng: &mut R,
) -> Var {
    let seqs: Vec<Vec<(usize, usize)>> = neighbors
        .iter()
        .map(|l| l.iter().map(|n| (n.relation.0, n.subject.0)).collect())
        .collect();
    pair_transformer(
        g,
        store,
        &dec.ti_tf,
        dec.types,
        enc.ti_relation,
        reps,
        &seqs,
        (TokenType::TiRelation, TokenType::TiEntity),
        cfg.dropout,
        rng,
    )
}

/// Global qualifier feature: attention of `W4(h_(s,t) ‖ h_r)` over
/// `W3(h_r̄ ‖ h_ē)` for every pooled qualifier. Empty pools give zero rows.
/// Returns `(B × d, weights)`; weights are `M × 1` grouped by query.
#[allow(clippy::too_many_arguments)]
pub fn match_global_qualifiers(
    g: &mut Graph,
    store: &ParamStore,
    enc: &EncoderParams,
    dec: &DecoderParams,
    reps: Var,
    pools: &[Vec<Qualifier>],
    h_st: Var,
    h_r: Var,
) -> (Var, Option<Var>) {
    let b = pools.len();
    let d = g.shape(h_st).1;
    let (mut rels, mut ents, mut group_of, mut segs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        segs.push((rels.len(), pool.len()));
        for q in pool {
            rels.push(q.relation.0);
            ents.push(q.entity.0);
            group_of.push(i);
        }
    }
    if rels.is_empty() {
        return (g.constant(Matrix::zeros(b, d)), None);
    }
    let hr = g.gather_param(store, enc.relation, &rels);
    let he = g.gather_rows(reps, &ents);
    let cat = g.concat_cols(&[hr, he]);
    let w3 = g.param(store, dec.w3);
    let x = g.linear(cat, w3);
    let qcat = g.concat_cols(&[h_st, h_r]);
    let w4 = g.param(store, dec.w4);
    let y = g.linear(qcat, w4);
    let y_rows = g.gather_rows(y, &group_of);
    let logits = g.row_dot(x, y_rows);
    let eta = g.segment_softmax(logits, Arc::new(segs));
    let ones = g.constant(Matrix::filled(1, d, 1.0));
    let eta_wide = g.matmul(eta, ones);
    let weighted = g.mul(eta_wide, x);
    (g.segment_sum(weighted, &group_of, b), Some(eta))
}

/// Full decode of a batch against the given entity representations.
#[allow(clippy::too_many_arguments)]
pub fn decode<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    enc: &EncoderParams,
    dec: &DecoderParams,
    cfg: &ModelConfig,
    sizes: &ModelSizes,
    ctx: &GraphContext,
    reps: Var,
    queries: &[LpQuery],
    rng: &mut R,
) -> DecodeOutput {
    let b = queries.len();
    let d = cfg.dim;
    let subjects: Vec<usize> = queries.iter().map(|q| q.subject.0).collect();
    let rels: Vec<usize> = queries.iter().map(|q| q.relation.0).collect();
    let times: Vec<usize> = queries.iter().map(|q| q.time.0).collect();

    let h_s = g.gather_rows(reps, &subjects);
    let h_st = time_aware(g, store, enc, cfg, h_s, &times);
    let h_r = g.gather_param(store, enc.relation, &rels);
    let h_t = cfg.use_time.then(|| time_encoding(g, store, enc, &times));

    let mut seq = vec![dec.query_tf.cls_rows(g, store, b), h_st, h_r];
    let mut kinds = vec![TokenType::Cls, TokenType::SubjectTime, TokenType::Relation];

    let mut pools = vec![Vec::new(); b];
    let mut eta = None;
    let global;
    if cfg.encoder.use_qualifiers {
        let hq = encode_query_qualifiers(g, store, enc, dec, cfg, reps, queries, rng);
        if cfg.decoder.use_matcher {
            for (p, q) in pools.iter_mut().zip(queries) {
                *p = ctx.subject_quals.qualifiers(q.subject).to_vec();
            }
            let (glo, e) = match_global_qualifiers(g, store, enc, dec, reps, &pools, h_st, h_r);
            eta = e;
            global = glo;
        } else {
            global = g.constant(Matrix::zeros(b, d));
        }
        seq.extend([hq, global]);
        kinds.extend([TokenType::QueryQualifiers, TokenType::GlobalQualifiers]);
    } else {
        global = g.constant(Matrix::zeros(b, d));
    }

    let mut ti_neighbors = vec![Vec::new(); b];
    if cfg.use_ti {
        for (l, q) in ti_neighbors.iter_mut().zip(queries) {
            let nb = ctx.ti.neighbors(q.subject);
            *l = nb[..nb.len().min(cfg.decoder.max_subject_quals)].to_vec();
        }
        let hti = encode_ti_feature(g, store, enc, dec, cfg, reps, &ti_neighbors, rng);
        seq.push(hti);
        kinds.push(TokenType::TiFeature);
    }

    let len = seq.len();
    let stacked = g.concat_rows(&seq);
    let order: Vec<usize> = (0..b).flat_map(|i| (0..len).map(move |k| k * b + i)).collect();
    let tokens = g.gather_rows(stacked, &order);
    let kind_ids: Vec<usize> = (0..b).flat_map(|_| kinds.iter().map(|&k| k as usize)).collect();
    let te = g.gather_param(store, dec.types, &kind_ids);
    let x = g.add(tokens, te);
    let segs: Segments = Arc::new((0..b).map(|i| (i * len, len)).collect());
    let out = dec.query_tf.forward(g, store, x, segs, cfg.dropout, rng);
    let starts: Vec<usize> = (0..b).map(|i| i * len).collect();
    let h_que = g.gather_rows(out.hidden, &starts);

    let q = match h_t {
        Some(ht) => g.mul(h_que, ht),
        None => h_que,
    };
    let w5 = g.param(store, dec.w5);
    let qw = g.matmul(q, w5);
    let cands: Vec<usize> = (0..sizes.n_entities).collect();
    let hc = g.gather_rows(reps, &cands);
    let scores = g.matmul_nt(qw, hc);

    DecodeOutput {
        scores,
        h_que,
        h_t,
        eta,
        pools,
        ti_neighbors,
        global,
    }
}

/// Score of one candidate for query `b` of a finished decode pass.
pub fn score(
    g: &Graph,
    store: &ParamStore,
    dec: &DecoderParams,
    out: &DecodeOutput,
    reps: Var,
    b: usize,
    candidate: EntityId,
) -> Result<f64> {
    let n = g.shape(out.scores).1;
    if candidate.0 >= n {
        return Err(HtkgError::CandidateOutOfRange(candidate.0));
    }
    let hq = g.value(out.h_que).row(b);
    let q: Vec<f64> = match out.h_t {
        Some(ht) => hq.iter().zip(g.value(ht).row(b)).map(|(a, c)| a * c).collect(),
        None => hq.to_vec(),
    };
    let w5 = store.value(dec.w5);
    let hc = g.value(reps).row(candidate.0);
    let w5h: Vec<f64> = (0..w5.rows()).map(|i| crate::tensor::dot(w5.row(i), hc)).collect();
    Ok(crate::tensor::dot(&q, &w5h))
}

#[derive(Debug, Clone, Serialize)]
pub struct QualifierWeight {
    pub relation: String,
    pub entity: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttentionRecord {
    pub query: QueryNames,
    pub subject_related_qualifiers: Vec<QualifierWeight>,
    pub ti_neighbors: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryNames {
    pub subject: String,
    pub relation: String,
    pub time: i64,
    pub qualifiers: Vec<(String, String)>,
    pub answer: String,
}

fn all_entity_name(ds: &Dataset, id: usize) -> String {
    ds.entity_name(EntityId(id)).to_string()
}

fn ti_relation_name(ds: &Dataset, id: usize) -> String {
    let n = ds.num_ti_relations();
    if id < n {
        ds.ti_relations.name(id).to_string()
    } else {
        format!("{}_inverse", ds.ti_relations.name(id - n))
    }
}

/// Per-query matcher weights and TI neighbors, named through `ds`.
pub fn attention_records(g: &Graph, out: &DecodeOutput, queries: &[LpQuery], ds: &Dataset) -> Vec<AttentionRecord> {
    let eta = out.eta.map(|e| g.value(e).data().to_vec()).unwrap_or_default();
    let mut off = 0;
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let pool = &out.pools[i];
            let weights: Vec<QualifierWeight> = pool
                .iter()
                .enumerate()
                .map(|(k, x)| QualifierWeight {
                    relation: ds.relation_name(x.relation),
                    entity: all_entity_name(ds, x.entity.0),
                    weight: eta.get(off + k).copied().unwrap_or(0.0),
                })
                .collect();
            if !eta.is_empty() {
                off += pool.len();
            }
            AttentionRecord {
                query: QueryNames {
                    subject: all_entity_name(ds, q.subject.0),
                    relation: ds.relation_name(q.relation),
                    time: ds.times.value(q.time.0),
                    qualifiers: q
                        .qualifiers
                        .iter()
                        .map(|x| (ds.relation_name(x.relation), all_entity_name(ds, x.entity.0)))
                        .collect(),
                    answer: all_entity_name(ds, q.ground_truth.0),
                },
                subject_related_qualifiers: weights,
                ti_neighbors: out.ti_neighbors[i]
                    .iter()
                    .map(|n| (ti_relation_name(ds, n.relation.0), all_entity_name(ds, n.subject.0)))
                    .collect(),
            }
        })
        .collect()
}
