use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use htkg_core::bench_builder::{
    build_benchmark, read_quadruples, ApiClient, BuildConfig, FixtureTransport, LiveTransport, RelationMapping,
    FIXTURE_DIR_ENV,
};
use htkg_core::data::{
    compute_stats, derive_queries, load_dataset, sample_proportion_dataset, subsample_qualifiers, synthetic_facts,
    write_dataset, LoadOptions, ProportionTarget, Split, SyntheticSpec,
};
use htkg_core::eval::{evaluate, EvalOptions, RankReport};
use htkg_core::model::{GraphContext, ModelSizes};
use htkg_core::tensor::{check_gradients, GradCheckOptions};
use htkg_core::train::{load_checkpoint, train as run_training, EpochMetrics, TrainConfig, TrainOutput};
use htkg_core::{Dataset, Model, ModelConfig, Preset};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::settings::{self, Resolved};
use crate::{BuildArgs, DumpArgs, EvalArgs, GradcheckArgs, SampleArgs, StatsArgs, TrainArgs, UserError};

/// Settings file written next to a checkpoint; valid `--config` input.
pub const SETTINGS_FILE: &str = "settings.conf";

fn load(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(UserError(format!("dataset directory {} not found", dir.display())).into());
    }
    load_dataset(dir, &LoadOptions::default()).with_context(|| format!("loading {}", dir.display()))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
        .map_err(|e: htkg_core::HtkgError| UserError(e.to_string()).into())
}

/// Model and graph context for a checkpoint, checked against `ds`.
fn restore(checkpoint: &Path, ds: &Dataset) -> Result<(Model, GraphContext, TrainConfig)> {
    if !checkpoint.is_dir() {
        return Err(UserError(format!("checkpoint directory {} not found", checkpoint.display())).into());
    }
    let (model, meta) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let sizes = ModelSizes::of(ds, &model.config)?;
    if sizes != model.sizes {
        return Err(UserError(format!(
            "checkpoint was trained on different vocabularies ({:?}) than this dataset ({:?})",
            model.sizes, sizes
        ))
        .into());
    }
    let ctx = GraphContext::from_dataset(ds, &model.config)?;
    Ok((model, ctx, meta.train))
}

fn preset_name(cfg: &ModelConfig) -> String {
    Preset::ALL
        .into_iter()
        .find(|p| {
            let mut c = cfg.clone();
            p.apply(&mut c);
            &c == cfg
        })
        .map(|p| p.name().to_string())
        .unwrap_or_else(|| "custom".into())
}

pub fn build(a: BuildArgs) -> Result<()> {
    let source = [
        read_quadruples(&a.source.join("train.txt"))?,
        read_quadruples(&a.source.join("valid.txt"))?,
        read_quadruples(&a.source.join("test.txt"))?,
    ];
    let mapping = match a.mapping.as_str() {
        "yago" => Some(RelationMapping::yago()),
        "none" => None,
        other => return Err(UserError(format!("unknown mapping `{other}` (expected yago or none)")).into()),
    };
    let fixtures = a
        .fixtures
        .clone()
        .or_else(|| std::env::var_os(FIXTURE_DIR_ENV).map(Into::into));
    let client = match (a.live, fixtures) {
        (true, Some(dir)) => {
            info!("live requests to {}, recording into {}", a.endpoint, dir.display());
            let live = LiveTransport::new(a.endpoint.clone());
            ApiClient::new(Box::new(FixtureTransport::recording(dir, Box::new(live))))
        }
        (true, None) => ApiClient::new(Box::new(LiveTransport::new(a.endpoint.clone()))),
        (false, Some(dir)) => {
            if !dir.is_dir() {
                return Err(UserError(format!("fixture directory {} not found", dir.display())).into());
            }
            ApiClient::fixtures(dir).with_backoff(Duration::ZERO)
        }
        (false, None) => {
            return Err(UserError(format!(
                "no fixture directory: pass --fixtures, set {FIXTURE_DIR_ENV}, or use --live"
            ))
            .into())
        }
    };
    let cfg = BuildConfig {
        mapping,
        redistribute: a.redistribute,
        mine_ti: !a.no_ti,
        seed: a.seed,
        max_in_flight: a.max_in_flight.max(1),
        ..BuildConfig::default()
    };
    let built = build_benchmark(source, &cfg, &client)?;
    let written = built.write(&a.out)?;
    let with_q = |v: &[htkg_core::data::RawFact]| v.iter().filter(|f| !f.qualifiers.is_empty()).count();
    println!(
        "train={} valid={} test={} ti={} qualified={}",
        built.train.len(),
        built.valid.len(),
        built.test.len(),
        built.ti.len(),
        with_q(&built.train) + with_q(&built.valid) + with_q(&built.test)
    );
    for p in written {
        info!("wrote {}", p.display());
    }
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<()> {
    if a.percent.is_none() && a.qualifier_ratio.is_none() {
        return Err(UserError("nothing to do: pass --percent and/or --qualifier-ratio".into()).into());
    }
    let mut ds = load(&a.data)?;
    if let Some(p) = a.percent {
        let target = ProportionTarget::from_percent(p)?;
        ds = sample_proportion_dataset(&ds, target, a.seed)?;
    }
    if let Some(r) = a.qualifier_ratio {
        ds = subsample_qualifiers(&ds, r, a.seed)?;
    }
    write_dataset(&ds, &a.out, &LoadOptions::default())?;
    println!(
        "train={} valid={} test={}",
        ds.train.len(),
        ds.valid.len(),
        ds.test.len()
    );
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let s = compute_stats(&load(&a.data)?);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.to_key_value());
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ov = settings::collect(a.config.as_deref(), |ov| {
        a.model.push_into(ov);
        a.train.push_into(ov);
        if let Some(s) = a.seed {
            ov.set_flag("seed", s);
        }
        if let Some(w) = a.workers {
            ov.set_flag("workers", w);
        }
    })?;
    let run = Resolved::from_overrides(&ov, ModelConfig::default(), TrainConfig::default())?;
    let ds = load(&a.data)?.augment_inverse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    let mut model = Model::for_dataset(run.model.clone(), &ds, &mut rng)?;
    let ctx = GraphContext::from_dataset(&ds, &run.model)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(SETTINGS_FILE), settings::render(&run))?;
    info!(
        "{} parameters, {} training queries, preset {}",
        model.store.num_scalars(),
        ds.train.len(),
        preset_name(&run.model)
    );
    let outcome = run_training(
        &mut model,
        &ds,
        &ctx,
        &run.train,
        &TrainOutput {
            dir: Some(a.out.clone()),
        },
        |m: &EpochMetrics| match &m.valid {
            Some(v) => info!(
                "epoch {} loss {:.5} valid MRR {:.4} ({:.1}s)",
                m.epoch, m.train_loss, v.mrr, m.wall_seconds
            ),
            None => info!("epoch {} loss {:.5} ({:.1}s)", m.epoch, m.train_loss, m.wall_seconds),
        },
    )?;
    match outcome.best_valid_mrr {
        Some(mrr) => println!("best epoch {} valid MRR {mrr:.4}", outcome.best_epoch),
        None => println!("trained {} epochs", outcome.history.len()),
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let ds = load(&a.data)?.augment_inverse()?;
    let (model, ctx, trained) = restore(&a.checkpoint, &ds)?;
    let opts = EvalOptions {
        filter_qualifiers: a.filter_qualifiers.unwrap_or(trained.filter_qualifiers),
        workers: a.workers,
        batch_size: a.batch_size.max(1),
        seed: a.seed,
        max_queries: a.max_queries,
    };
    let (report, queries) = evaluate(&model, &ds, &ctx, split, &opts)?;
    print!("{}", RankReport::table(&[(&preset_name(&model.config), &report)]));
    if let Some(path) = &a.report {
        let per_query = a.per_query.then_some((queries.as_slice(), &ds));
        fs::write(path, serde_json::to_string_pretty(&report.to_json(per_query))?)?;
        info!("report written to {}", path.display());
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.entities < 2 {
        return Err(UserError("need at least 2 entities".into()).into());
    }
    let ov = settings::collect(a.config.as_deref(), |ov| {
        a.model.push_into(ov);
        if let Some(s) = a.seed {
            ov.set_flag("seed", s);
        }
    })?;
    // a small full model with the TI path on unless told otherwise
    let mut base = ModelConfig::from_preset(Preset::Psi);
    base.dim = 8;
    base.dropout = 0.0;
    base.decoder.heads = 2;
    let run = Resolved::from_overrides(&ov, base, TrainConfig::default())?;
    let seed = run.train.seed;

    let spec = SyntheticSpec {
        entities: a.entities,
        facts: a.facts,
        seed,
        ..SyntheticSpec::default()
    };
    let capacity = spec.entities * (spec.entities - 1) * spec.relations * spec.times as usize;
    if a.facts == 0 || a.facts > capacity {
        return Err(UserError(format!("facts must lie in 1..={capacity} for {} entities", a.entities)).into());
    }
    let (facts, ti) = synthetic_facts(&spec);
    let ds = htkg_core::data::dataset_from_raw(facts, vec![], vec![], ti)?.augment_inverse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::for_dataset(run.model.clone(), &ds, &mut rng)?;
    let ctx = GraphContext::from_dataset(&ds, &run.model)?;
    let queries = derive_queries(&ds.train);
    let opts = GradCheckOptions {
        step: a.step,
        tol: a.tol,
        max_coords_per_param: a.max_coords,
        seed,
        ..GradCheckOptions::default()
    };
    let mut store = model.store.clone();
    let report = check_gradients(
        &mut store,
        None,
        |s, g| model.loss_with(s, g, &ctx, &queries, &mut ChaCha8Rng::seed_from_u64(seed)),
        &opts,
    );

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<32} {:>8} {:>12}", "tensor", "checked", "max rel err")?;
    for e in &report.entries {
        writeln!(out, "{:<32} {:>8} {:>12.3e}", e.name, e.checked, e.max_rel_err)?;
    }
    let checked: usize = report.entries.iter().map(|e| e.checked).sum();
    writeln!(
        out,
        "max rel err {:.3e} over {checked} coordinates (tol {:.0e}): {}",
        report.max_rel_err,
        report.tol,
        if report.passed { "PASS" } else { "FAIL" }
    )?;
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if !report.passed {
        let worst = report.worst().map(|w| w.name.as_str()).unwrap_or("?");
        return Err(anyhow!(
            "gradient check failed: max rel err {:.3e} in {worst}",
            report.max_rel_err
        ));
    }
    Ok(())
}

pub fn dump_attention(a: DumpArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let ds = load(&a.data)?.augment_inverse()?;
    let (model, ctx, _) = restore(&a.checkpoint, &ds)?;
    let mut queries = derive_queries(ds.split(split));
    queries.truncate(a.limit);
    let reps = model.encode_eval(&ctx, a.seed);
    let records = model.attention_eval(&ds, &ctx, &reps, &queries);
    let json = serde_json::to_string_pretty(&records)?;
    match &a.out {
        Some(p) => fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}
