//! Qualifier-attentional time-aware graph encoder.
//!
//! Each layer recomputes a set of target entities from the previous layer's
//! representations by averaging, over sampled temporal neighbors
//! `(e', r', t', Q)`, the message `W2 · φ(h_(e',t'), g_r)`. The relation side
//! `g_r` is `γ·h_Qual + (1 − γ)·h_r'` for neighbors with qualifiers and plain
//! `h_r'` otherwise. With TI knowledge on, a second gate `β` mixes in the mean
//! of `W_ψ · φ(h_e'', h_r'')` over TI neighbors.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, RngCore};

use crate::data::EntityId;
use crate::error::Result;
use crate::model::{bias_rows, glorot, keyed_rng, uniform, GraphContext, ModelConfig, ModelSizes};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Segments, Var};

pub const GAMMA_INIT: f64 = 0.2;
pub const BETA_INIT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct LayerParams {
    /// `d × 2d`, shared by qualifier and neighbor composition.
    pub w1: ParamId,
    pub w_qual: ParamId,
    pub w2: ParamId,
    pub w_psi: ParamId,
    /// `1 × d` attention vector.
    pub w_att: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub entity: ParamId,
    pub relation: ParamId,
    pub ti_relation: ParamId,
    pub time_freq: ParamId,
    pub time_phase: ParamId,
    pub ft_w: ParamId,
    pub ft_b: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        sizes: &ModelSizes,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.dim;
        // Unit-variance embeddings keep the three-way product in phi at O(1)
        // through both layers; weights are Glorot-uniform.
        let emb = |store: &mut ParamStore, name: &str, r: usize, rng: &mut R| {
            store.add(name, uniform(rng, r, d, 3f64.sqrt()))
        };
        let w =
            |store: &mut ParamStore, name: &str, r: usize, c: usize, rng: &mut R| store.add(name, glorot(rng, r, c));
        let entity = emb(store, "enc.entity", sizes.n_all_entities, rng)?;
        let relation = emb(store, "enc.relation", sizes.n_relations, rng)?;
        let ti_relation = emb(store, "enc.ti_relation", sizes.n_ti_relations, rng)?;
        let b = 1.0 / (d as f64).sqrt();
        let time_freq = store.add("enc.time_freq", uniform(rng, 1, d, b))?;
        let time_phase = store.add("enc.time_phase", uniform(rng, 1, d, b))?;
        let ft_w = w(store, "enc.ft.w", d, 2 * d, rng)?;
        let ft_b = store.add("enc.ft.b", Matrix::zeros(1, d))?;
        let gamma = store.add("enc.gamma", Matrix::scalar(GAMMA_INIT))?;
        let beta = store.add("enc.beta", Matrix::scalar(BETA_INIT))?;
        let mut layers = Vec::with_capacity(cfg.encoder.layers);
        for l in 0..cfg.encoder.layers {
            layers.push(LayerParams {
                w1: w(store, &format!("enc.l{l}.w1"), d, 2 * d, rng)?,
                w_qual: w(store, &format!("enc.l{l}.w_qual"), d, d, rng)?,
                w2: w(store, &format!("enc.l{l}.w2"), d, d, rng)?,
                w_psi: w(store, &format!("enc.l{l}.w_psi"), d, d, rng)?,
                w_att: store.add(format!("enc.l{l}.w_att"), uniform(rng, 1, d, b))?,
            });
        }
        Ok(Self {
            entity,
            relation,
            ti_relation,
            time_freq,
            time_phase,
            ft_w,
            ft_b,
            gamma,
            beta,
            layers,
        })
    }
}

/// `W1(a‖b) ⊙ rotate(a, b) ⊙ (a + b)`, row-wise.
pub fn phi(g: &mut Graph, a: Var, b: Var, w1: Var) -> Var {
    let cat = g.concat_cols(&[a, b]);
    let lin = g.linear(cat, w1);
    let rot = g.complex_rotate(a, b);
    let sum = g.add(a, b);
    let t = g.mul(lin, rot);
    g.mul(t, sum)
}

/// Attention-weighted qualifier feature per group.
///
/// `hq` holds one composed qualifier per row and `rel` the primary relation
/// of the owning group on the same row. Groups are contiguous row ranges;
/// `group_of[i]` gives row `i`'s group. Returns `(n_groups × d, attention)`.
#[allow(clippy::too_many_arguments)]
pub fn qualifier_attention(
    g: &mut Graph,
    hq: Var,
    rel: Var,
    w_att: Var,
    w_qual: Var,
    segs: Segments,
    group_of: &[usize],
    n_groups: usize,
) -> (Var, Var) {
    let s = g.row_dot(hq, rel);
    let logits = g.matmul(s, w_att);
    let a = g.segment_softmax(logits, segs);
    let weighted = g.mul(a, hq);
    let proj = g.linear(weighted, w_qual);
    (g.segment_sum(proj, group_of, n_groups), a)
}

/// `√(1/d)·cos(ω t + φ)` for each time id.
pub fn time_encoding(g: &mut Graph, store: &ParamStore, p: &EncoderParams, times: &[usize]) -> Var {
    let n = times.len();
    let d = store.value(p.time_freq).cols();
    let t = g.constant(Matrix::from_vec(n, 1, times.iter().map(|&t| t as f64).collect()));
    let w = g.param(store, p.time_freq);
    let wt = g.matmul(t, w);
    let ph = bias_rows(g, store, p.time_phase, n);
    let x = g.add(wt, ph);
    let c = g.cos(x);
    g.scale(c, (1.0 / d as f64).sqrt())
}

/// `tanh(W_t (h ‖ time(t)) + b_t)`; identity on `h` when time is off.
pub fn time_aware(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    cfg: &ModelConfig,
    h: Var,
    times: &[usize],
) -> Var {
    if !cfg.use_time {
        return h;
    }
    let te = time_encoding(g, store, p, times);
    let cat = g.concat_cols(&[h, te]);
    let w = g.param(store, p.ft_w);
    let y = g.linear(cat, w);
    let b = bias_rows(g, store, p.ft_b, times.len());
    let z = g.add(y, b);
    g.tanh(z)
}

/// Neighbor choices for one layer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerPlan {
    /// Entities recomputed by this layer, ascending.
    pub targets: Vec<usize>,
    /// Per target: positions into its temporal neighbor list, ascending.
    pub temporal: Vec<Vec<usize>>,
    /// Per target: positions into its TI neighbor list, ascending.
    pub ti: Vec<Vec<usize>>,
}

fn pick<R: Rng>(rng: &mut R, n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut v = sample(rng, n, cap).into_vec();
    v.sort_unstable();
    v
}

/// Plans which entities each layer must compute so that the last layer covers
/// `needed`. Neighbor sampling uses a stream keyed by `(seed, layer, entity)`,
/// so choices do not depend on what else is being encoded.
pub fn plan_layers(ctx: &GraphContext, cfg: &ModelConfig, needed: &[usize], seed: u64) -> Vec<LayerPlan> {
    let n_layers = cfg.encoder.layers;
    let cap = cfg.encoder.neighbor_cap;
    let mut plans = vec![LayerPlan::default(); n_layers];
    let mut want: BTreeSet<usize> = needed.iter().copied().collect();
    for l in (0..n_layers).rev() {
        let mut next = want.clone();
        let plan = &mut plans[l];
        for &e in &want {
            let nb = ctx.temporal.neighbors(EntityId(e));
            let mut rng = keyed_rng(seed, ((l as u64) << 48) ^ (e as u64) << 1);
            let tp = pick(&mut rng, nb.len(), cap);
            next.extend(tp.iter().map(|&i| nb[i].subject.0));
            let tip = if cfg.use_ti {
                let tn = ctx.ti.neighbors(EntityId(e));
                let mut rng = keyed_rng(seed, ((l as u64) << 48) ^ ((e as u64) << 1) ^ 1);
                let tip = pick(&mut rng, tn.len(), cap);
                next.extend(tip.iter().map(|&i| tn[i].subject.0));
                tip
            } else {
                Vec::new()
            };
            plan.targets.push(e);
            plan.temporal.push(tp);
            plan.ti.push(tip);
        }
        want = next;
    }
    plans
}

/// Runs one aggregation layer. Rows of `input` not in `plan.targets`, and
/// targets without any neighbor, pass through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn encode_layer<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    layer: usize,
    input: Var,
    plan: &LayerPlan,
    rng: &mut R,
) -> Var {
    let lp = &p.layers[layer];
    let n_all = g.shape(input).0;

    // temporal aggregation
    let mut agg_pos = vec![usize::MAX; plan.targets.len()];
    let (mut subj, mut rels, mut times, mut seg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut quals: Vec<&[crate::data::Qualifier]> = Vec::new();
    let mut n_agg = 0;
    for (k, &e) in plan.targets.iter().enumerate() {
        if plan.temporal[k].is_empty() {
            continue;
        }
        let nb = ctx.temporal.neighbors(EntityId(e));
        for &i in &plan.temporal[k] {
            let n = &nb[i];
            subj.push(n.subject.0);
            rels.push(n.relation.0);
            times.push(n.time.0);
            seg.push(n_agg);
            quals.push(&n.qualifiers);
        }
        agg_pos[k] = n_agg;
        n_agg += 1;
    }

    let agg = if n_agg > 0 {
        let hs = g.gather_rows(input, &subj);
        let hs = time_aware(g, store, p, cfg, hs, &times);
        let rel = g.gather_param(store, p.relation, &rels);
        let relside = relation_side(g, store, p, cfg, layer, rel, &quals);
        let w1 = g.param(store, lp.w1);
        let w2 = g.param(store, lp.w2);
        let m = phi(g, hs, relside, w1);
        let msg = g.linear(m, w2);
        let a = g.segment_mean(msg, &seg, n_agg);
        Some(g.dropout(a, cfg.dropout, rng))
    } else {
        None
    };

    // TI gate
    let mut ti_pos = vec![usize::MAX; plan.targets.len()];
    let (mut ti_subj, mut ti_rels, mut ti_seg, mut ti_base) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut n_ti = 0;
    if cfg.use_ti {
        for (k, &e) in plan.targets.iter().enumerate() {
            if plan.ti[k].is_empty() {
                continue;
            }
            let nb = ctx.ti.neighbors(EntityId(e));
            for &i in &plan.ti[k] {
                ti_subj.push(nb[i].subject.0);
                ti_rels.push(nb[i].relation.0);
                ti_seg.push(n_ti);
            }
            ti_base.push(if agg_pos[k] != usize::MAX {
                n_all + agg_pos[k]
            } else {
                e
            });
            ti_pos[k] = n_ti;
            n_ti += 1;
        }
    }

    if agg.is_none() && n_ti == 0 {
        return input;
    }
    let mut parts = vec![input];
    parts.extend(agg);
    let pre = g.concat_rows(&parts);
    let mut rows: Vec<usize> = (0..n_all).collect();
    for (k, &e) in plan.targets.iter().enumerate() {
        if agg_pos[k] != usize::MAX {
            rows[e] = n_all + agg_pos[k];
        }
    }
    if n_ti == 0 {
        return g.gather_rows(pre, &rows);
    }

    let he = g.gather_rows(input, &ti_subj);
    let hr = g.gather_param(store, p.ti_relation, &ti_rels);
    let w1 = g.param(store, lp.w1);
    let wpsi = g.param(store, lp.w_psi);
    let m = phi(g, he, hr, w1);
    let msg = g.linear(m, wpsi);
    let psi = g.segment_mean(msg, &ti_seg, n_ti);
    let psi = g.dropout(psi, cfg.dropout, rng);
    let base = g.gather_rows(pre, &ti_base);
    let beta = g.param(store, p.beta);
    let mixed = g.blend(beta, psi, base);
    let full = g.concat_rows(&[pre, mixed]);
    let off = g.shape(pre).0;
    for (k, &e) in plan.targets.iter().enumerate() {
        if ti_pos[k] != usize::MAX {
            rows[e] = off + ti_pos[k];
        }
    }
    g.gather_rows(full, &rows)
}

/// Relation-side input per neighbor row: gated qualifier feature where the
/// neighbor has qualifiers (and qualifiers are on), `h_r'` otherwise.
fn relation_side(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    cfg: &ModelConfig,
    layer: usize,
    rel: Var,
    quals: &[&[crate::data::Qualifier]],
) -> Var {
    if !cfg.encoder.use_qualifiers || quals.iter().all(|q| q.is_empty()) {
        return rel;
    }
    let lp = &p.layers[layer];
    let (mut q_ent, mut q_rel, mut group_of, mut owner, mut segs, mut with_q) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, qs) in quals.iter().enumerate() {
        if qs.is_empty() {
            continue;
        }
        segs.push((q_ent.len(), qs.len()));
        for q in qs.iter() {
            q_ent.push(q.entity.0);
            q_rel.push(q.relation.0);
            group_of.push(with_q.len());
            owner.push(row);
        }
        with_q.push(row);
    }
    let n_groups = with_q.len();
    // qualifier entities always use base embeddings
    let he = g.gather_param(store, p.entity, &q_ent);
    let hr = g.gather_param(store, p.relation, &q_rel);
    let w1 = g.param(store, lp.w1);
    let hq = phi(g, he, hr, w1);
    let w_qual = g.param(store, lp.w_qual);
    let hqual = if cfg.encoder.use_qual_attention {
        let r_rows = g.gather_rows(rel, &owner);
        let w_att = g.param(store, lp.w_att);
        qualifier_attention(g, hq, r_rows, w_att, w_qual, Arc::new(segs), &group_of, n_groups).0
    } else {
        let proj = g.linear(hq, w_qual);
        g.segment_mean(proj, &group_of, n_groups)
    };
    let rel_q = g.gather_rows(rel, &with_q);
    let gamma = g.param(store, p.gamma);
    let gated = g.blend(gamma, hqual, rel_q);
    let n_rows = quals.len();
    let both = g.concat_rows(&[rel, gated]);
    let mut idx: Vec<usize> = (0..n_rows).collect();
    for (k, &row) in with_q.iter().enumerate() {
        idx[row] = n_rows + k;
    }
    g.gather_rows(both, &idx)
}

/// Multi-layer driver: returns an `n_all × d` matrix whose rows for `needed`
/// hold last-layer representations. Other rows may be stale.
#[allow(clippy::too_many_arguments)]
pub fn encode_all<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    needed: &[usize],
    sample_seed: u64,
    rng: &mut R,
) -> Var {
    let plans = plan_layers(ctx, cfg, needed, sample_seed);
    let mut h = g.param(store, p.entity);
    for (l, plan) in plans.iter().enumerate() {
        h = encode_layer(g, store, p, cfg, ctx, l, h, plan, rng);
    }
    h
}

/// One layer for a single entity given the previous layer's matrix (`1 × d`).
#[allow(clippy::too_many_arguments)]
pub fn encode_entity<R: RngCore>(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    layer: usize,
    input: Var,
    e: EntityId,
    sample_seed: u64,
    rng: &mut R,
) -> Var {
    let upto = ModelConfig {
        encoder: crate::model::EncoderConfig {
            layers: layer + 1,
            ..cfg.encoder.clone()
        },
        ..cfg.clone()
    };
    let plan = plan_layers(ctx, &upto, &[e.0], sample_seed).swap_remove(layer);
    let out = encode_layer(g, store, p, cfg, ctx, layer, input, &plan, rng);
    g.gather_rows(out, &[e.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dataset_from_raw, RawFact};
    use crate::model::Model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fact(s: &str, r: &str, o: &str, t: i64, q: &[(&str, &str)]) -> RawFact {
        RawFact {
            subject: s.into(),
            relation: r.into(),
            object: o.into(),
            time: t,
            qualifiers: q.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    fn small_cfg() -> ModelConfig {
        let mut c = ModelConfig {
            dim: 8,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        c.decoder.heads = 2;
        c
    }

    fn setup(facts: Vec<RawFact>, cfg: &ModelConfig) -> (Model, GraphContext) {
        let ds = dataset_from_raw(facts, vec![], vec![], vec![])
            .unwrap()
            .augment_inverse()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::for_dataset(cfg.clone(), &ds, &mut rng).unwrap();
        let ctx = GraphContext::from_dataset(&ds, cfg).unwrap();
        (m, ctx)
    }

    fn encoded(m: &Model, ctx: &GraphContext) -> Matrix {
        m.encode_eval(ctx, 0)
    }

    #[test]
    fn phi_hand_example() {
        let mut g = Graph::new(false);
        let a = g.constant(Matrix::row_vector(vec![6.0, 3.0]));
        let b = g.constant(Matrix::row_vector(vec![0.0, 0.0]));
        let w = g.constant(Matrix::from_vec(2, 4, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));
        let o = phi(&mut g, a, b, w);
        assert_eq!(g.value(o).data(), &[216.0, 27.0]);
    }

    #[test]
    fn phi_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new(false);
        let a = g.constant(Matrix::zeros(1, 8));
        let w = g.constant(uniform(&mut rng, 8, 16, 1.0));
        let o = phi(&mut g, a, a, w);
        assert!(g.value(o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_qualifier_attention_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new(false);
        let hq = g.constant(uniform(&mut rng, 1, 4, 1.0));
        let r = g.constant(uniform(&mut rng, 1, 4, 1.0));
        let w = g.constant(uniform(&mut rng, 1, 4, 1.0));
        let wq = g.constant(uniform(&mut rng, 4, 4, 1.0));
        let (out, a) = qualifier_attention(&mut g, hq, r, w, wq, Arc::new(vec![(0, 1)]), &[0], 1);
        assert!(g.value(a).data().iter().all(|&v| v == 1.0));
        let direct = g.value(wq).matmul_nt(g.value(hq));
        assert!(g.value(out).max_abs_diff(&direct.transpose()) < 1e-15);
    }

    #[test]
    fn identical_qualifiers_split_attention_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new(false);
        let row = uniform(&mut rng, 1, 4, 1.0);
        let two = Matrix::from_vec(2, 4, row.data().iter().chain(row.data()).copied().collect());
        let hq = g.constant(two);
        let r = g.constant(Matrix::from_vec(2, 4, vec![0.3; 8]));
        let w = g.constant(uniform(&mut rng, 1, 4, 1.0));
        let wq = g.constant(Matrix::identity(4));
        let (_, a) = qualifier_attention(&mut g, hq, r, w, wq, Arc::new(vec![(0, 2)]), &[0, 0], 1);
        assert!(g.value(a).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn isolated_entity_keeps_base_embedding() {
        let cfg = small_cfg();
        let (m, ctx) = setup(
            vec![fact("a", "r", "b", 1, &[]), fact("c", "q", "c", 1, &[("r", "z")])],
            &cfg,
        );
        let z = 3; // a, b, c, z
        let h = encoded(&m, &ctx);
        assert_eq!(h.row(z), m.store.value(m.enc.entity).row(z));
    }

    #[test]
    fn closed_gamma_ignores_qualifier_contents() {
        let cfg = small_cfg();
        let facts = |q: &str| {
            vec![
                fact("x", "q1", "y", 0, &[]),
                fact("y", "q2", "w", 0, &[]),
                fact("a", "r", "b", 1, &[("q1", q), ("q2", "y")]),
                fact("b", "r", "c", 2, &[]),
            ]
        };
        let (mut m1, ctx1) = setup(facts("x"), &cfg);
        let (mut m2, ctx2) = setup(facts("y"), &cfg);
        for m in [&mut m1, &mut m2] {
            let gamma = m.enc.gamma;
            m.store.value_mut(gamma).data_mut()[0] = 0.0;
        }
        // same vocab order means the same initial parameters
        assert_eq!(m1.store, m2.store);
        assert_eq!(encoded(&m1, &ctx1), encoded(&m2, &ctx2));
        let gamma = m1.enc.gamma;
        m1.store.value_mut(gamma).data_mut()[0] = 0.2;
        m2.store.value_mut(gamma).data_mut()[0] = 0.2;
        assert_ne!(encoded(&m1, &ctx1), encoded(&m2, &ctx2));
    }

    #[test]
    fn two_layers_propagate_along_chains() {
        let cfg = small_cfg();
        let (mut m, ctx) = setup(vec![fact("a", "r", "b", 1, &[]), fact("b", "r", "c", 2, &[])], &cfg);
        let before = encoded(&m, &ctx);
        let ent = m.enc.entity;
        m.store.value_mut(ent).row_mut(0)[0] += 0.5;
        let after = encoded(&m, &ctx);
        assert_ne!(before.row(2), after.row(2));

        let mut one = cfg.clone();
        one.encoder.layers = 1;
        let (mut m1, ctx1) = setup(vec![fact("a", "r", "b", 1, &[]), fact("b", "r", "c", 2, &[])], &one);
        let before = encoded(&m1, &ctx1);
        let ent = m1.enc.entity;
        m1.store.value_mut(ent).row_mut(0)[0] += 0.5;
        assert_eq!(before.row(2), encoded(&m1, &ctx1).row(2));
    }

    #[test]
    fn one_layer_matches_per_entity_calls() {
        let mut cfg = small_cfg();
        cfg.encoder.layers = 1;
        let (m, ctx) = setup(
            vec![
                fact("a", "r", "b", 1, &[("q", "c")]),
                fact("c", "r", "b", 2, &[]),
                fact("b", "s", "a", 0, &[("q", "a"), ("q", "c")]),
            ],
            &cfg,
        );
        let all = encoded(&m, &ctx);
        for e in 0..3 {
            let mut g = Graph::new(false);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let input = g.param(&m.store, m.enc.entity);
            let o = encode_entity(&mut g, &m.store, &m.enc, &cfg, &ctx, 0, input, EntityId(e), 0, &mut rng);
            assert!(g
                .value(o)
                .data()
                .iter()
                .zip(all.row(e))
                .all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn generous_cap_equals_uncapped() {
        let mut cfg = small_cfg();
        let facts: Vec<RawFact> = (0..6).map(|i| fact(&format!("s{i}"), "r", "hub", i, &[])).collect();
        cfg.encoder.neighbor_cap = 6;
        let (m, ctx) = setup(facts.clone(), &cfg);
        let capped = encoded(&m, &ctx);
        cfg.encoder.neighbor_cap = 1000;
        let (m2, ctx2) = setup(facts.clone(), &cfg);
        assert_eq!(capped, encoded(&m2, &ctx2));
        cfg.encoder.neighbor_cap = 2;
        let (m3, ctx3) = setup(facts, &cfg);
        assert_ne!(capped, encoded(&m3, &ctx3));
    }

    #[test]
    fn plan_samples_within_cap() {
        let mut cfg = small_cfg();
        cfg.encoder.neighbor_cap = 3;
        let facts: Vec<RawFact> = (0..10).map(|i| fact(&format!("s{i}"), "r", "hub", i, &[])).collect();
        let (_, ctx) = setup(facts, &cfg);
        let hub = 1; // s0, hub, s1, ...
        let plans = plan_layers(&ctx, &cfg, &[hub], 9);
        let top = &plans[1];
        assert_eq!(top.targets, vec![hub]);
        assert_eq!(top.temporal[0].len(), 3);
        assert_eq!(plans, plan_layers(&ctx, &cfg, &[hub], 9));
    }
}
