//! Acceptance suite. Prints one status line per criterion and exits non-zero
//! when any runnable criterion fails.
//!
//! Criteria that need the full benchmark files read them from
//! `HTKG_DATA_DIR/{wiki-hy,yago-hy}`; without that variable they report
//! NOT RUN instead of passing.
//!
//! Run a subset with `cargo test --test acceptance -- 3 7`.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use htkg_core::bench_builder::{build_benchmark, read_quadruples, ApiClient, BuildConfig, RelationMapping};
use htkg_core::data::{
    compute_stats, dataset_from_raw, derive_queries, load_dataset, sample_proportion_dataset, LoadOptions,
    ProportionTarget, RawFact, Split,
};
use htkg_core::decoder::match_global_qualifiers;
use htkg_core::encoder::qualifier_attention;
use htkg_core::eval::{evaluate, filtered_rank, EvalOptions, FilterSet, RankReport};
use htkg_core::model::GraphContext;
use htkg_core::tensor::{check_gradients, GradCheckOptions, Segments};
use htkg_core::train::{train, TrainConfig, TrainOutput};
use htkg_core::{
    Dataset, EntityId, Graph, LpQuery, Matrix, Model, ModelConfig, ParamStore, Preset, Qualifier, RelationId, TimeId,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{build, small_config, toy_dataset, ToySpec};

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect(),
    )
}

fn scores_of(model: &Model, ctx: &GraphContext, queries: &[LpQuery]) -> Matrix {
    let reps = model.encode_eval(ctx, 0);
    model.score_eval(ctx, &reps, queries)
}

// 1 ---------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let ds = toy_dataset(&ToySpec::default());
    let mut cfg = small_config(8);
    cfg.use_ti = true;
    let (model, ctx) = build(&cfg, &ds, 11);
    let queries = derive_queries(&ds.train);
    let mut store = model.store.clone();
    let opts = GradCheckOptions {
        step: 1e-5,
        ..GradCheckOptions::default()
    };
    let start = Instant::now();
    let report = check_gradients(
        &mut store,
        None,
        |s, g| model.loss_with(s, g, &ctx, &queries, &mut rng(1)),
        &opts,
    );
    let secs = start.elapsed().as_secs_f64();
    let checked: usize = report.entries.iter().map(|e| e.checked).sum();
    let worst = report.worst().map(|w| w.name.clone()).unwrap_or_default();
    check(
        report.max_rel_err < 1e-4 && secs < 60.0,
        format!(
            "{} tensors, {checked} coordinates, max rel err {:.2e} (worst {worst}), {secs:.1}s",
            report.entries.len(),
            report.max_rel_err
        ),
    )
}

// 2 ---------------------------------------------------------------------

fn rotation_invariant() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = 2 * r.random_range(4..=32);
        let rows = r.random_range(1..4);
        let e = random_matrix(&mut r, rows, d, 3.0);
        // a rotation vector carries each angle in both halves
        let mut rot = Matrix::zeros(rows, d);
        for i in 0..rows {
            for j in 0..d / 2 {
                let theta = r.random_range(-10.0..10.0);
                rot.set(i, j, theta);
                rot.set(i, j + d / 2, theta);
            }
        }
        let mut g = Graph::new(false);
        let (ev, rv) = (g.constant(e.clone()), g.constant(rot));
        let out = g.complex_rotate(ev, rv);
        let o = g.value(out);
        for i in 0..rows {
            for j in 0..d / 2 {
                let before = e.get(i, j).hypot(e.get(i, j + d / 2));
                let after = o.get(i, j).hypot(o.get(i, j + d / 2));
                worst = worst.max((before - after).abs());
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("max |Δ|z|| = {worst:.2e} over 1000 instances, d in 8..=64"),
    )
}

// 3 ---------------------------------------------------------------------

fn attention_normalization() -> Outcome {
    let mut r = rng(3);
    let mut worst_cols = 0.0f64;
    for _ in 0..1000 {
        let d = 2 * r.random_range(1..=8);
        let sizes: Vec<usize> = (0..r.random_range(1..5)).map(|_| r.random_range(1..7)).collect();
        let m: usize = sizes.iter().sum();
        let mut segs = Vec::new();
        let mut group_of = Vec::new();
        let mut at = 0;
        for (k, &n) in sizes.iter().enumerate() {
            segs.push((at, n));
            group_of.extend(std::iter::repeat_n(k, n));
            at += n;
        }
        let mut g = Graph::new(false);
        let hq = g.constant(random_matrix(&mut r, m, d, 4.0));
        let rel = g.constant(random_matrix(&mut r, m, d, 4.0));
        let w_att = g.constant(random_matrix(&mut r, 1, d, 4.0));
        let w_qual = g.constant(random_matrix(&mut r, d, d, 1.0));
        let segs: Segments = Arc::new(segs.clone());
        let (_, a) = qualifier_attention(&mut g, hq, rel, w_att, w_qual, segs.clone(), &group_of, sizes.len());
        let a = g.value(a);
        for &(s, n) in segs.iter() {
            for c in 0..d {
                let col: f64 = (s..s + n).map(|i| a.get(i, c)).sum();
                worst_cols = worst_cols.max((col - 1.0).abs());
            }
        }
    }

    let ds = toy_dataset(&ToySpec::default());
    let cfg = small_config(8);
    let mut worst_eta = 0.0f64;
    let mut pools_seen = 0;
    for inst in 0..1000u64 {
        let (model, _) = build(&cfg, &ds, inst / 100);
        let mut r = rng(300 + inst);
        let b = r.random_range(1..5);
        let pools: Vec<Vec<Qualifier>> = (0..b)
            .map(|_| {
                (0..r.random_range(0..9))
                    .map(|_| Qualifier {
                        relation: RelationId(r.random_range(0..model.sizes.n_relations)),
                        entity: EntityId(r.random_range(0..model.sizes.n_entities)),
                    })
                    .collect()
            })
            .collect();
        let mut g = Graph::new(false);
        let reps = g.constant(random_matrix(&mut r, model.sizes.n_all_entities, cfg.dim, 3.0));
        let h_st = g.constant(random_matrix(&mut r, b, cfg.dim, 3.0));
        let h_r = g.constant(random_matrix(&mut r, b, cfg.dim, 3.0));
        let (_, eta) = match_global_qualifiers(&mut g, &model.store, &model.enc, &model.dec, reps, &pools, h_st, h_r);
        let Some(eta) = eta else { continue };
        let e = g.value(eta);
        let mut at = 0;
        for p in pools.iter().filter(|p| !p.is_empty()) {
            let s: f64 = (at..at + p.len()).map(|i| e.get(i, 0)).sum();
            worst_eta = worst_eta.max((s - 1.0).abs());
            at += p.len();
            pools_seen += 1;
        }
    }
    check(
        worst_cols <= 1e-12 && worst_eta <= 1e-12,
        format!("qualifier columns max |Σ−1| = {worst_cols:.1e}; matcher weights max |Σ−1| = {worst_eta:.1e} over {pools_seen} pools"),
    )
}

// 4 ---------------------------------------------------------------------

/// Copies every parameter of `from` into the same-named parameter of `to`.
fn copy_params(from: &ParamStore, to: &mut Model) {
    to.load_params(from).expect("identical parameter layout");
}

fn mutate_qualifiers(ds: &mut Dataset, r: &mut ChaCha8Rng) {
    let (nr, ne) = (ds.num_relations(), ds.num_entities());
    for f in ds.train.iter_mut() {
        let k = r.random_range(0..4);
        f.qualifiers = (0..k)
            .map(|_| Qualifier {
                relation: RelationId(r.random_range(0..nr)),
                entity: EntityId(r.random_range(0..ne)),
            })
            .collect();
    }
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.data().iter().map(|v| v.to_bits()).collect()
}

fn gate_closure() -> Outcome {
    let ds = toy_dataset(&ToySpec {
        entities: 12,
        facts: 30,
        ..ToySpec::default()
    });
    let cfg = small_config(8);
    let (mut model, ctx) = build(&cfg, &ds, 4);
    *model.store.value_mut(model.enc.gamma) = Matrix::scalar(0.0);
    let base = model.encode_eval(&ctx, 0);
    let mut gamma_ok = true;
    let mut r = rng(4);
    for _ in 0..20 {
        let mut m = ds.clone();
        mutate_qualifiers(&mut m, &mut r);
        let ctx2 = GraphContext::from_dataset(&m, &cfg).unwrap();
        gamma_ok &= bits(&model.encode_eval(&ctx2, 0)) == bits(&base);
    }
    // control: an open gate does see the mutation
    *model.store.value_mut(model.enc.gamma) = Matrix::scalar(0.2);
    let open = model.encode_eval(&ctx, 0);
    let mut m = ds.clone();
    mutate_qualifiers(&mut m, &mut r);
    let sensitive = model
        .encode_eval(&GraphContext::from_dataset(&m, &cfg).unwrap(), 0)
        .max_abs_diff(&open)
        > 1e-9;

    let mut on = cfg.clone();
    on.use_ti = true;
    let (mut psi, ctx_on) = build(&on, &ds, 5);
    *psi.store.value_mut(psi.enc.beta) = Matrix::scalar(0.0);
    let (mut plain, ctx_off) = build(&cfg, &ds, 99);
    copy_params(&psi.store, &mut plain);
    let a = psi.encode_eval(&ctx_on, 0);
    let b = plain.encode_eval(&ctx_off, 0);
    let beta_ok = bits(&a) == bits(&b);
    check(
        gamma_ok && beta_ok && sensitive,
        format!("γ=0 bit-identical under 20 qualifier mutations: {gamma_ok}; β=0 ψ-on ≡ ψ-off bit-identical: {beta_ok}; open-gate control differs: {sensitive}"),
    )
}

// 5 ---------------------------------------------------------------------

fn permutation_invariance() -> Outcome {
    let ds = toy_dataset(&ToySpec {
        entities: 12,
        facts: 30,
        ti_facts: 12,
        ..ToySpec::default()
    });
    let mut cfg = small_config(8);
    cfg.use_ti = true;
    let (model, ctx) = build(&cfg, &ds, 6);
    let queries = derive_queries(&ds.train);
    let base = scores_of(&model, &ctx, &queries);
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut m = ds.clone();
        for f in m.train.iter_mut() {
            f.qualifiers.shuffle(&mut r);
        }
        m.ti_facts.shuffle(&mut r);
        let mut qs = queries.clone();
        for q in qs.iter_mut() {
            q.qualifiers.shuffle(&mut r);
        }
        let ctx2 = GraphContext::from_dataset(&m, &cfg).unwrap();
        worst = worst.max(scores_of(&model, &ctx2, &qs).max_abs_diff(&base));
    }
    check(
        worst <= 1e-10,
        format!("max score change {worst:.2e} over 20 permutations of qualifiers and TI lists"),
    )
}

// 6 ---------------------------------------------------------------------

fn ablation_contracts() -> Outcome {
    let ds = toy_dataset(&ToySpec {
        entities: 12,
        facts: 30,
        ..ToySpec::default()
    });
    let queries = derive_queries(&ds.train);
    let with = |p: Preset| {
        let mut c = ModelConfig::from_preset(p);
        c.dim = 8;
        c.dropout = 0.0;
        c.decoder.heads = 2;
        c
    };
    let mut r = rng(7);

    // A: qualifier content in facts and in queries
    let qual_change = |cfg: &ModelConfig, r: &mut ChaCha8Rng| {
        let (model, ctx) = build(cfg, &ds, 8);
        let base = scores_of(&model, &ctx, &queries);
        let mut m = ds.clone();
        mutate_qualifiers(&mut m, r);
        let mut qs = queries.clone();
        for q in qs.iter_mut() {
            q.qualifiers = vec![Qualifier {
                relation: RelationId(r.random_range(0..m.num_relations())),
                entity: EntityId(r.random_range(0..m.num_entities())),
            }];
        }
        let ctx2 = GraphContext::from_dataset(&m, cfg).unwrap();
        scores_of(&model, &ctx2, &qs).max_abs_diff(&base)
    };
    let a = (0..5)
        .map(|_| qual_change(&with(Preset::VariantA), &mut r))
        .fold(0.0, f64::max);
    let a_ctrl = qual_change(&with(Preset::Full), &mut r);

    // τ: one global permutation of timestamp ids, applied to facts and queries
    let time_change = |cfg: &ModelConfig, r: &mut ChaCha8Rng| {
        let (model, ctx) = build(cfg, &ds, 9);
        let base = scores_of(&model, &ctx, &queries);
        let mut perm: Vec<usize> = (0..ds.num_times()).collect();
        perm.shuffle(r);
        let mut m = ds.clone();
        for f in m.train.iter_mut() {
            f.time = TimeId(perm[f.time.0]);
        }
        let mut qs = queries.clone();
        for q in qs.iter_mut() {
            q.time = TimeId(perm[q.time.0]);
        }
        let ctx2 = GraphContext::from_dataset(&m, cfg).unwrap();
        scores_of(&model, &ctx2, &qs).max_abs_diff(&base)
    };
    let tau = (0..5)
        .map(|_| time_change(&with(Preset::Tau), &mut r))
        .fold(0.0, f64::max);
    let tau_ctrl = time_change(&with(Preset::Full), &mut r);

    // C: the subject-related qualifier pools, with the encoder context fixed
    let pool_change = |cfg: &ModelConfig, r: &mut ChaCha8Rng| {
        let (model, ctx) = build(cfg, &ds, 10);
        let reps = model.encode_eval(&ctx, 0);
        let base = model.score_eval(&ctx, &reps, &queries);
        let mut m = ds.clone();
        mutate_qualifiers(&mut m, r);
        let mut ctx2 = ctx.clone();
        ctx2.subject_quals = GraphContext::from_dataset(&m, cfg).unwrap().subject_quals;
        model.score_eval(&ctx2, &reps, &queries).max_abs_diff(&base)
    };
    let c = (0..5)
        .map(|_| pool_change(&with(Preset::VariantC), &mut r))
        .fold(0.0, f64::max);
    let c_ctrl = pool_change(&with(Preset::Full), &mut r);

    let ok = a <= 1e-10 && tau <= 1e-10 && c <= 1e-10 && a_ctrl > 1e-9 && tau_ctrl > 1e-9 && c_ctrl > 1e-9;
    check(
        ok,
        format!(
            "max change A {a:.1e} (full {a_ctrl:.1e}), τ {tau:.1e} (full {tau_ctrl:.1e}), C {c:.1e} (full {c_ctrl:.1e})"
        ),
    )
}

// 7 ---------------------------------------------------------------------

/// Expected rank by sorting: the truth's tie block spans positions
/// `first..=last` (0-based) of the descending order, so its expected rank is
/// the mean of `first + 1 ..= last + 1`.
fn oracle_rank(scores: &[f64], truth: usize, filtered: &HashSet<usize>) -> f64 {
    let mut kept: Vec<f64> = (0..scores.len())
        .filter(|c| *c == truth || !filtered.contains(c))
        .map(|c| scores[c])
        .collect();
    kept.sort_by(|a, b| b.total_cmp(a));
    let st = scores[truth];
    let first = kept.iter().position(|&v| v == st).unwrap();
    let last = kept.iter().rposition(|&v| v == st).unwrap();
    (first + last) as f64 / 2.0 + 1.0
}

fn ranking_oracle() -> Outcome {
    let mut r = rng(7);
    let mut mismatches = 0;
    let mut with_ties = 0;
    for _ in 0..1000 {
        let levels = r.random_range(2..60);
        let scores: Vec<f64> = (0..200)
            .map(|_| r.random_range(0..levels) as f64 * 0.25 - 3.0)
            .collect();
        let truth = r.random_range(0..200);
        let q = LpQuery {
            subject: EntityId(0),
            relation: RelationId(0),
            time: TimeId(0),
            qualifiers: vec![],
            ground_truth: EntityId(truth),
        };
        let mut filter = FilterSet::empty();
        let key = filter.key(&q);
        let density = r.random_range(0.0..0.5);
        let mut known = HashSet::new();
        filter.insert(key.clone(), truth);
        for c in 0..200 {
            if c != truth && r.random_bool(density) {
                filter.insert(key.clone(), c);
                known.insert(c);
            }
        }
        let got = filtered_rank(&scores, &q, &filter).unwrap();
        let want = oracle_rank(&scores, truth, &known);
        if scores
            .iter()
            .enumerate()
            .any(|(c, &v)| c != truth && !known.contains(&c) && v == scores[truth])
        {
            with_ties += 1;
        }
        if got != want {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{mismatches} mismatches in 1000 cases ({with_ties} with ties), |E| = 200"),
    )
}

// 8 ---------------------------------------------------------------------

fn overfit_sanity() -> Outcome {
    let (facts, _) = common::toy_raw(&ToySpec {
        entities: 30,
        facts: 50,
        relations: 4,
        qualifier_relations: 3,
        times: 8,
        ti_facts: 0,
        ti_only_entities: 0,
        seed: 8,
        ..ToySpec::default()
    });
    let ds = dataset_from_raw(facts, vec![], vec![], vec![])
        .unwrap()
        .augment_inverse()
        .unwrap();
    let mut cfg = small_config(16);
    cfg.dropout = 0.0;
    let (mut model, ctx) = build(&cfg, &ds, 8);
    let tc = TrainConfig {
        batch_size: 16,
        learning_rate: 2e-3,
        epochs: 200,
        seed: 8,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&mut model, &ds, &ctx, &tc, &TrainOutput::default(), |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (report, _) = evaluate(&model, &ds, &ctx, Split::Train, &EvalOptions::default()).unwrap();
    let last = out.history.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    check(
        report.mrr >= 0.95 && secs < 300.0,
        format!(
            "train MRR {:.4} (Hits@1 {:.3}) after {} epochs, final loss {last:.2e}, {secs:.1}s",
            report.mrr,
            report.hits1,
            out.history.len()
        ),
    )
}

// 9 ---------------------------------------------------------------------

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("HTKG_DATA_DIR").map(PathBuf::from)
}

struct PublishedStats {
    name: &'static str,
    splits: [usize; 3],
    qual_percent: f64,
    n_ti: usize,
    n_ti_entities: usize,
    facts_with_qual: usize,
}

const PUBLISHED: [PublishedStats; 2] = [
    PublishedStats {
        name: "wiki-hy",
        splits: [111_252, 13_900, 13_926],
        qual_percent: 9.59,
        n_ti: 5_360,
        n_ti_entities: 3_801,
        facts_with_qual: 26_670,
    },
    PublishedStats {
        name: "yago-hy",
        splits: [51_193, 10_973, 10_977],
        qual_percent: 6.98,
        n_ti: 7_331,
        n_ti_entities: 5_782,
        facts_with_qual: 10_214,
    },
];

fn dataset_arithmetic() -> Outcome {
    // structural part on a synthetic set: doubling and 2·N_test queries
    let ds = common::toy_dataset(&ToySpec::default());
    let (raw, ti) = common::toy_raw(&ToySpec::default());
    let (tr, te) = raw.split_at(10);
    let plain = dataset_from_raw(tr.to_vec(), vec![], te.to_vec(), ti).unwrap();
    let aug = plain.clone().augment_inverse().unwrap();
    let structural = aug.train.len() == 2 * plain.train.len()
        && derive_queries(&aug.test).len() == 2 * plain.test.len()
        && ds.num_relations() == 2 * ds.relations.len();

    let Some(dir) = data_dir() else {
        return Outcome {
            status: if structural { Status::NotRun } else { Status::Fail },
            detail: format!(
                "benchmark files absent (set HTKG_DATA_DIR); synthetic doubling/query checks {}",
                if structural { "ok" } else { "FAILED" }
            ),
        };
    };
    let mut problems = Vec::new();
    for t in &PUBLISHED {
        let ds = match load_dataset(&dir.join(t.name), &LoadOptions::default()) {
            Ok(d) => d,
            Err(e) => {
                problems.push(format!("{}: {e}", t.name));
                continue;
            }
        };
        let s = compute_stats(&ds);
        let got = [s.n_train, s.n_valid, s.n_test];
        if got != t.splits {
            problems.push(format!("{} splits {got:?}", t.name));
        }
        if (s.qual_percent * 100.0).round() / 100.0 != t.qual_percent {
            problems.push(format!("{} Qual% {:.4}", t.name, s.qual_percent));
        }
        if s.n_facts_with_qual != t.facts_with_qual || s.n_ti_facts != t.n_ti || s.n_ti_entities != t.n_ti_entities {
            problems.push(format!(
                "{} |∃Qual| {} TI {} TI-entities {}",
                t.name, s.n_facts_with_qual, s.n_ti_facts, s.n_ti_entities
            ));
        }
        let n_test = ds.test.len();
        let aug = ds.augment_inverse().unwrap();
        if derive_queries(&aug.test).len() != 2 * n_test || aug.train.len() != 2 * t.splits[0] {
            problems.push(format!("{} augmentation counts", t.name));
        }
    }
    check(
        structural && problems.is_empty(),
        if problems.is_empty() {
            "both benchmarks reproduce every checked count".to_string()
        } else {
            problems.join("; ")
        },
    )
}

// 10 --------------------------------------------------------------------

/// A dataset with the given qualifier-bearing counts per split and enough
/// qualifier-free facts for the (33) target.
fn proportion_surrogate(n_qual: [usize; 3]) -> Dataset {
    let mut splits: Vec<Vec<RawFact>> = Vec::new();
    for (k, &nq) in n_qual.iter().enumerate() {
        let n = 3 * nq + 50;
        splits.push(
            (0..n)
                .map(|i| RawFact {
                    subject: format!("s{k}_{}", i % 997),
                    relation: format!("r{}", i % 7),
                    object: format!("o{}", i % 1009),
                    time: 1900 + (i % 100) as i64,
                    qualifiers: if i % 3 == 0 && i / 3 < nq {
                        vec![("q".to_string(), format!("v{}", i % 13))]
                    } else {
                        vec![]
                    },
                })
                .collect(),
        );
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    dataset_from_raw(train, valid, test, vec![]).unwrap()
}

type FactKey = (String, String, String, i64);

fn fact_keys(ds: &Dataset) -> HashSet<(usize, FactKey)> {
    let mut out = HashSet::new();
    for (k, split) in [&ds.train, &ds.valid, &ds.test].into_iter().enumerate() {
        for f in ds.raw_split(split) {
            out.insert((k, (f.subject, f.relation, f.object, f.time)));
        }
    }
    out
}

fn proportion_sampler() -> Outcome {
    let tables: [(&str, [[usize; 3]; 3]); 2] = [
        (
            "Wiki-hy",
            [[21_210, 2_764, 2_696], [31_815, 4_146, 4_044], [63_630, 8_292, 8_088]],
        ),
        (
            "YAGO-hy",
            [[7_232, 1_530, 1_452], [10_848, 2_295, 2_178], [21_696, 4_590, 4_356]],
        ),
    ];
    let mut problems = Vec::new();
    let sample_all = |ds: &Dataset, name: &str, want: &[[usize; 3]; 3], problems: &mut Vec<String>| {
        let mut prev: Option<HashSet<(usize, FactKey)>> = None;
        for (i, t) in [ProportionTarget::P100, ProportionTarget::P66, ProportionTarget::P33]
            .into_iter()
            .enumerate()
        {
            let s = sample_proportion_dataset(ds, t, 1).unwrap();
            let got = [s.train.len(), s.valid.len(), s.test.len()];
            if got != want[i] {
                problems.push(format!("{name}({}) {got:?}", t.percent()));
            }
            let keys = fact_keys(&s);
            if let Some(p) = &prev {
                if !p.is_subset(&keys) {
                    problems.push(format!("{name}({}) does not contain the previous level", t.percent()));
                }
            }
            prev = Some(keys);
        }
    };
    for (name, want) in &tables {
        sample_all(&proportion_surrogate(want[0]), name, want, &mut problems);
    }
    let mut real = "real benchmarks not checked (set HTKG_DATA_DIR)".to_string();
    if let Some(dir) = data_dir() {
        for ((name, want), sub) in tables.iter().zip(["wiki-hy", "yago-hy"]) {
            match load_dataset(&dir.join(sub), &LoadOptions::default()) {
                Ok(ds) => sample_all(&ds, name, want, &mut problems),
                Err(e) => problems.push(format!("{sub}: {e}")),
            }
        }
        real = "real benchmarks checked".to_string();
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("(100)/(66)/(33) sizes and nesting reproduced from qualifier counts; {real}")
        } else {
            problems.join("; ")
        },
    )
}

// 11 --------------------------------------------------------------------

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn build_from_fixtures(out: &Path) -> htkg_core::Result<Vec<PathBuf>> {
    let src = fixtures_dir().join("yago_sample");
    let source = [
        read_quadruples(&src.join("train.txt"))?,
        read_quadruples(&src.join("valid.txt"))?,
        read_quadruples(&src.join("test.txt"))?,
    ];
    let cfg = BuildConfig {
        mapping: Some(RelationMapping::yago()),
        ..BuildConfig::default()
    };
    let client = ApiClient::fixtures(fixtures_dir().join("wikidata")).with_backoff(Duration::ZERO);
    build_benchmark(source, &cfg, &client)?.write(out)
}

fn fixture_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = build_from_fixtures(a.path()).unwrap();
    let fb = build_from_fixtures(b.path()).unwrap();
    let identical = fa.len() == fb.len()
        && fa
            .iter()
            .zip(&fb)
            .all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
    let src = read_quadruples(&fixtures_dir().join("yago_sample/train.txt")).unwrap();
    let owns: Vec<_> = src.iter().filter(|f| f.relation == "owns").collect();
    let train = std::fs::read_to_string(a.path().join("train.txt")).unwrap();
    let inverted = !owns.is_empty()
        && owns.iter().all(|f| {
            train
                .lines()
                .any(|l| l.starts_with(&format!("{}\tP127\t{}\t{}", f.object, f.subject, f.time)))
        });
    let n_facts: usize = ["train.txt", "valid.txt", "test.txt"]
        .iter()
        .map(|f| std::fs::read_to_string(a.path().join(f)).unwrap().lines().count())
        .sum();
    check(
        identical && inverted && n_facts == 10,
        format!(
            "{} files byte-identical: {identical}; owns → P127 inverted: {inverted}; {n_facts} facts",
            fa.len()
        ),
    )
}

// 12 --------------------------------------------------------------------

fn random_scorer() -> Outcome {
    let mut r = rng(12);
    let filter = FilterSet::empty();
    let ranks: Vec<f64> = (0..10_000)
        .map(|_| {
            let scores: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
            let q = LpQuery {
                subject: EntityId(0),
                relation: RelationId(0),
                time: TimeId(0),
                qualifiers: vec![],
                ground_truth: EntityId(r.random_range(0..10)),
            };
            filtered_rank(&scores, &q, &filter).unwrap()
        })
        .collect();
    let report = RankReport::from_ranks("random", ranks);
    let analytic: f64 = (1..=10).map(|k| 1.0 / k as f64).sum::<f64>() / 10.0;
    check(
        (report.mrr - analytic).abs() <= 0.03 && (analytic - 0.2929).abs() < 5e-5,
        format!("MRR {:.4} vs analytic {analytic:.4} over 10^4 queries", report.mrr),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "rotation invariant", rotation_invariant),
        (3, "attention normalization", attention_normalization),
        (4, "gate closure", gate_closure),
        (5, "permutation invariance", permutation_invariance),
        (6, "ablation contracts", ablation_contracts),
        (7, "filtered-ranking oracle", ranking_oracle),
        (8, "overfit sanity", overfit_sanity),
        (9, "dataset arithmetic", dataset_arithmetic),
        (10, "proportion sampler", proportion_sampler),
        (11, "bench-builder fixture determinism", fixture_determinism),
        (12, "random-scorer calibration", random_scorer),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                status: Status::Fail,
                detail: format!("panicked: {msg}"),
            }
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::NotRun => "NOT RUN",
        };
        println!(
            "criterion {n:>2} [{tag}] {name}: {} ({:.1}s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
