//! End-to-end runs of the `htkg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use htkg_core::data::{format_fact, synthetic_facts, SyntheticSpec};

fn htkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htkg"))
        .args(args)
        .env_remove("HTKG_FIXTURE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn htkg")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a synthetic dataset split 70/15/15 into `dir`.
fn write_synthetic(dir: &Path, facts: usize, seed: u64) {
    let spec = SyntheticSpec {
        entities: 25,
        facts,
        relations: 4,
        qualifier_relations: 3,
        times: 10,
        qualified: 0.3,
        ti_facts: 10,
        ti_only_entities: 3,
        seed,
    };
    let (facts, ti) = synthetic_facts(&spec);
    fs::create_dir_all(dir).unwrap();
    let n = facts.len();
    let (a, b) = (n * 70 / 100, n * 85 / 100);
    for (name, part) in [
        ("train.txt", &facts[..a]),
        ("valid.txt", &facts[a..b]),
        ("test.txt", &facts[b..]),
    ] {
        let text: String = part.iter().map(|f| format_fact(f) + "\n").collect();
        fs::write(dir.join(name), text).unwrap();
    }
    let text: String = ti
        .iter()
        .map(|f| format!("{}\t{}\t{}\n", f.subject, f.relation, f.object))
        .collect();
    fs::write(dir.join("ti.txt"), text).unwrap();
}

fn qualified_per_split(dir: &Path) -> [usize; 3] {
    ["train.txt", "valid.txt", "test.txt"].map(|f| {
        fs::read_to_string(dir.join(f))
            .unwrap()
            .lines()
            .filter(|l| l.split('\t').count() > 4)
            .count()
    })
}

fn lines(dir: &Path, f: &str) -> usize {
    fs::read_to_string(dir.join(f)).unwrap().lines().count()
}

#[test]
fn gradcheck_on_toy_graph_passes() {
    let o = htkg(&["gradcheck", "--dim", "8", "--entities", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    assert!(last.ends_with("PASS"), "{last}");
    let err: f64 = last.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn build_from_fixtures_is_deterministic_and_reads_env() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("yago_sample");
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_htkg"))
            .args(["build", "--source", s(&src), "--out", s(out), "--mapping", "yago"])
            .env("HTKG_FIXTURE_DIR", fixtures().join("wikidata"))
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (oa, ob) = (run(&a), run(&b));
    assert!(oa.status.success() && ob.status.success(), "{}", stderr(&oa));
    for f in [
        "train.txt",
        "valid.txt",
        "test.txt",
        "ti.txt",
        "entities.txt",
        "relations.txt",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        lines(&a, "train.txt") + lines(&a, "valid.txt") + lines(&a, "test.txt"),
        10
    );

    let st = htkg(&["stats", s(&a)]);
    assert!(st.status.success());
    assert!(stdout(&st).contains("n_train=7\n"), "{}", stdout(&st));
    let js = htkg(&["stats", s(&a), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&js.stdout).unwrap();
    assert_eq!(v["n_test"], 1);
}

#[test]
fn build_without_fixtures_is_a_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("yago_sample");
    let o = htkg(&["build", "--source", s(&src), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("HTKG_FIXTURE_DIR"));
}

#[test]
fn offline_build_with_uncached_request_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("yago_sample");
    // without the relation mapping the requests use YAGO names, which were never recorded
    let o = htkg(&[
        "build",
        "--source",
        s(&src),
        "--out",
        s(&tmp.path().join("o")),
        "--fixtures",
        s(&fixtures().join("wikidata")),
        "--no-ti",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fixture missing"), "{}", stderr(&o));
}

#[test]
fn sample_keeps_all_qualified_facts_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic(&data, 300, 3);
    let nq = qualified_per_split(&data);
    let run = |pct: &str, out: &Path, seed: &str| {
        htkg(&["sample", s(&data), "--percent", pct, "--seed", seed, "--out", s(out)])
    };

    let p100 = tmp.path().join("p100");
    let o = run("100", &p100, "1");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o).trim(),
        format!("train={} valid={} test={}", nq[0], nq[1], nq[2])
    );

    let p66 = tmp.path().join("p66");
    assert!(run("66", &p66, "1").status.success());
    assert_eq!(qualified_per_split(&p66), nq);
    assert_eq!(lines(&p66, "train.txt"), (3 * nq[0]).div_ceil(2));

    let again = tmp.path().join("again");
    assert!(run("66", &again, "1").status.success());
    for f in ["train.txt", "valid.txt", "test.txt"] {
        assert_eq!(fs::read(p66.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }

    let bad = run("50", &tmp.path().join("bad"), "1");
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn qualifier_ratio_thins_qualifiers() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic(&data, 200, 4);
    let out = tmp.path().join("half");
    let o = htkg(&[
        "sample",
        s(&data),
        "--qualifier-ratio",
        "0.5",
        "--seed",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pairs = |d: &Path| -> usize {
        ["train.txt", "valid.txt", "test.txt"]
            .iter()
            .flat_map(|f| {
                fs::read_to_string(d.join(f))
                    .unwrap()
                    .lines()
                    .map(|l| (l.split('\t').count() - 4) / 2)
                    .collect::<Vec<_>>()
            })
            .sum()
    };
    let (before, after) = (pairs(&data), pairs(&out));
    assert_eq!(after, (before as f64 * 0.5).round() as usize);
}

#[test]
fn train_then_eval_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic(&data, 120, 5);
    let conf = tmp.path().join("run.conf");
    fs::write(
        &conf,
        "# small run\ndim = 16\nheads = 2\nepochs = 9\nbatch_size = 32\nlearning_rate = 0.002\n",
    )
    .unwrap();
    let train = |out: &Path| {
        htkg(&[
            "train",
            s(&data),
            "--out",
            s(out),
            "--config",
            s(&conf),
            "--preset",
            "psi",
            "--epochs",
            "3",
            "--seed",
            "4",
        ])
    };
    let ck = tmp.path().join("ck");
    let o = train(&ck);
    assert!(o.status.success(), "{}", stderr(&o));

    // flags override the file, the file overrides defaults
    let settings = fs::read_to_string(ck.join("settings.conf")).unwrap();
    for want in ["epochs = 3", "dim = 16", "batch_size = 32", "use_ti = true", "seed = 4"] {
        assert!(settings.contains(want), "{want} missing from\n{settings}");
    }
    let csv = fs::read_to_string(ck.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("epoch,train_loss,valid_MRR,valid_H1,valid_H3,valid_H10,wall_seconds"));

    // same seed, same parameters
    let ck2 = tmp.path().join("ck2");
    assert!(train(&ck2).status.success());
    assert_eq!(
        fs::read(ck.join("model.ckpt")).unwrap(),
        fs::read(ck2.join("model.ckpt")).unwrap()
    );

    let report = tmp.path().join("report.json");
    let e = htkg(&[
        "eval",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--report",
        s(&report),
        "--per-query",
        "--workers",
        "2",
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    let table = stdout(&e);
    assert!(table.starts_with("Model") && table.contains("psi"), "{table}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let n = v["n_queries"].as_u64().unwrap() as usize;
    assert_eq!(n, 2 * lines(&data, "test.txt"));
    assert_eq!(v["per_query"].as_array().unwrap().len(), n);
    let mrr = v["mrr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mrr));

    // worker count does not change the numbers
    let e1 = htkg(&["eval", s(&data), "--checkpoint", s(&ck), "--workers", "1"]);
    assert_eq!(stdout(&e1), table);

    let dump = tmp.path().join("att.json");
    let d = htkg(&[
        "dump-attention",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--limit",
        "3",
        "--out",
        s(&dump),
    ]);
    assert!(d.status.success(), "{}", stderr(&d));
    let recs: serde_json::Value = serde_json::from_str(&fs::read_to_string(&dump).unwrap()).unwrap();
    let recs = recs.as_array().unwrap();
    assert_eq!(recs.len(), 3);
    for r in recs {
        let w: f64 = r["subject_related_qualifiers"]
            .as_array()
            .unwrap()
            .iter()
            .map(|q| q["weight"].as_f64().unwrap())
            .sum();
        assert!(w == 0.0 || (w - 1.0).abs() < 1e-9, "{w}");
    }
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_synthetic(&a, 60, 1);
    write_synthetic(&b, 60, 1);
    let mut train = fs::read_to_string(b.join("train.txt")).unwrap();
    train.push_str("newcomer\tr0\te0\t2001\n");
    fs::write(b.join("train.txt"), train).unwrap();
    let ck = tmp.path().join("ck");
    let o = htkg(&[
        "train",
        s(&a),
        "--out",
        s(&ck),
        "--dim",
        "8",
        "--heads",
        "2",
        "--epochs",
        "1",
        "--eval-every",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = htkg(&["eval", s(&b), "--checkpoint", s(&ck)]);
    assert_eq!(e.status.code(), Some(1), "{}", stderr(&e));
}

#[test]
fn user_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_synthetic(&data, 40, 6);
    let out = tmp.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", s(&data), "--out", s(&out), "--no-such-flag"],
        vec!["stats", "/definitely/not/here"],
        vec![
            "train",
            s(&data),
            "--out",
            s(&out),
            "--preset",
            "variant-c",
            "--use-matcher",
            "true",
        ],
        vec!["train", s(&data), "--out", s(&out), "--preset", "variant-z"],
        vec!["train", s(&data), "--out", s(&out), "--dim", "7"],
        vec!["eval", s(&data), "--checkpoint", s(&out), "--split", "dev"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = htkg(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "dimension = 8\n").unwrap();
    let o = htkg(&["train", s(&data), "--out", s(&out), "--config", s(&conf)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown setting `dimension`"));
}

#[test]
fn help_succeeds() {
    let o = htkg(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in [
        "build",
        "sample",
        "stats",
        "train",
        "eval",
        "gradcheck",
        "dump-attention",
    ] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
}
