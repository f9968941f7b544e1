//! Line-delimited fact files.
//!
//! Fact line: `s<TAB>r<TAB>o<TAB>t[<TAB>rq<TAB>eq]*`; TI line: `s<TAB>r<TAB>o`.
//! Lines starting with `#` and blank lines are skipped.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, EntityId, HyperFact, Qualifier, RelationId, TiFact, TiRelationId, TimeId, TimeVocab, Vocab};
use crate::error::{HtkgError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFact {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub time: i64,
    pub qualifiers: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawTiFact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub train_file: String,
    pub valid_file: String,
    pub test_file: String,
    pub ti_file: String,
    /// Optional vocabulary files (one name per line) that fix id order.
    pub entity_vocab_file: Option<String>,
    pub relation_vocab_file: Option<String>,
    /// Upper bound on any vocabulary size.
    pub max_vocab: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            train_file: "train.txt".into(),
            valid_file: "valid.txt".into(),
            test_file: "test.txt".into(),
            ti_file: "ti.txt".into(),
            entity_vocab_file: None,
            relation_vocab_file: None,
            max_vocab: u32::MAX as usize,
        }
    }
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> HtkgError {
    HtkgError::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.strip_suffix('\r').unwrap_or(l);
        if l.trim().is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l))
        }
    })
}

pub fn parse_fact_file(path: &Path) -> Result<Vec<RawFact>> {
    let text = fs::read_to_string(path)?;
    parse_facts(&text, path)
}

pub(crate) fn parse_facts(text: &str, path: &Path) -> Result<Vec<RawFact>> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected at least 4 columns, got {}", cols.len()),
            ));
        }
        if !(cols.len() - 4).is_multiple_of(2) {
            return Err(parse_err(path, lineno, "dangling qualifier relation without entity"));
        }
        if cols.iter().any(|c| c.is_empty()) {
            return Err(parse_err(path, lineno, "empty column"));
        }
        let time = cols[3]
            .trim()
            .parse::<i64>()
            .map_err(|e| parse_err(path, lineno, format!("bad timestamp `{}`: {e}", cols[3])))?;
        let qualifiers = cols[4..]
            .chunks(2)
            .map(|p| (p[0].to_string(), p[1].to_string()))
            .collect();
        out.push(RawFact {
            subject: cols[0].to_string(),
            relation: cols[1].to_string(),
            object: cols[2].to_string(),
            time,
            qualifiers,
        });
    }
    Ok(out)
}

pub fn parse_ti_file(path: &Path) -> Result<Vec<RawTiFact>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(parse_err(path, lineno, "expected exactly 3 non-empty columns"));
        }
        out.push(RawTiFact {
            subject: cols[0].to_string(),
            relation: cols[1].to_string(),
            object: cols[2].to_string(),
        });
    }
    Ok(out)
}

fn read_vocab_file(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path)?;
    Vocab::from_names(content_lines(&text).map(|(_, l)| l.to_string()))
}

/// Loads `train/valid/test` (and `ti` when present) from `dir`.
pub fn load_dataset(dir: &Path, options: &LoadOptions) -> Result<Dataset> {
    let train_path = dir.join(&options.train_file);
    let train = parse_fact_file(&train_path)?;
    if train.is_empty() {
        return Err(HtkgError::EmptySplit(train_path.display().to_string()));
    }
    let valid = parse_fact_file(&dir.join(&options.valid_file))?;
    let test = parse_fact_file(&dir.join(&options.test_file))?;
    let ti_path = dir.join(&options.ti_file);
    let ti = if ti_path.exists() {
        parse_ti_file(&ti_path)?
    } else {
        Vec::new()
    };
    let entities = match &options.entity_vocab_file {
        Some(f) => read_vocab_file(&dir.join(f))?,
        None => Vocab::new(),
    };
    let relations = match &options.relation_vocab_file {
        Some(f) => read_vocab_file(&dir.join(f))?,
        None => Vocab::new(),
    };
    let ds = build_dataset(train, valid, test, ti, entities, relations)?;
    for (what, n) in [
        ("entity", ds.num_all_entities()),
        ("relation", ds.relations.len() * 2),
        ("ti relation", ds.ti_relations.len() * 2),
    ] {
        if n > options.max_vocab {
            return Err(HtkgError::IdOverflow(format!(
                "{what} vocabulary size {n} exceeds {}",
                options.max_vocab
            )));
        }
    }
    Ok(ds)
}

/// Builds a dataset with first-seen vocabularies (train, valid, test, TI).
pub fn dataset_from_raw(
    train: Vec<RawFact>,
    valid: Vec<RawFact>,
    test: Vec<RawFact>,
    ti: Vec<RawTiFact>,
) -> Result<Dataset> {
    if train.is_empty() {
        return Err(HtkgError::EmptySplit("train".into()));
    }
    build_dataset(train, valid, test, ti, Vocab::new(), Vocab::new())
}

fn build_dataset(
    train: Vec<RawFact>,
    valid: Vec<RawFact>,
    test: Vec<RawFact>,
    ti: Vec<RawTiFact>,
    mut entities: Vocab,
    mut relations: Vocab,
) -> Result<Dataset> {
    let times = TimeVocab::from_values(train.iter().chain(&valid).chain(&test).map(|f| f.time));
    let mut convert = |raw: &[RawFact]| -> Vec<HyperFact> {
        raw.iter()
            .map(|f| {
                let subject = EntityId(entities.get_or_insert(&f.subject));
                let relation = RelationId(relations.get_or_insert(&f.relation));
                let object = EntityId(entities.get_or_insert(&f.object));
                let qualifiers = f
                    .qualifiers
                    .iter()
                    .map(|(r, e)| Qualifier {
                        relation: RelationId(relations.get_or_insert(r)),
                        entity: EntityId(entities.get_or_insert(e)),
                    })
                    .collect();
                HyperFact {
                    subject,
                    relation,
                    object,
                    time: TimeId(times.id(f.time).expect("time collected above")),
                    qualifiers,
                }
            })
            .collect()
    };
    let train = convert(&train);
    let valid = convert(&valid);
    let test = convert(&test);

    let mut ti_entities = Vocab::new();
    let mut ti_relations = Vocab::new();
    let n_ent = entities.len();
    let mut ti_facts = Vec::with_capacity(ti.len());
    for f in &ti {
        if relations.contains(&f.relation) {
            return Err(HtkgError::Invalid(format!(
                "TI relation `{}` also occurs in HTKG facts",
                f.relation
            )));
        }
        let mut ent = |name: &str| match entities.get(name) {
            Some(id) => EntityId(id),
            None => EntityId(n_ent + ti_entities.get_or_insert(name)),
        };
        let subject = ent(&f.subject);
        let object = ent(&f.object);
        ti_facts.push(TiFact {
            subject,
            relation: TiRelationId(ti_relations.get_or_insert(&f.relation)),
            object,
        });
    }

    Ok(Dataset::from_parts(
        train,
        valid,
        test,
        ti_facts,
        entities,
        relations,
        times,
        ti_entities,
        ti_relations,
    ))
}

impl Dataset {
    /// String-level view of a split (base relations only).
    pub fn raw_split(&self, facts: &[HyperFact]) -> Vec<RawFact> {
        facts
            .iter()
            .map(|f| RawFact {
                subject: self.entity_name(f.subject).to_string(),
                relation: self.relation_name(f.relation),
                object: self.entity_name(f.object).to_string(),
                time: self.times.value(f.time.0),
                qualifiers: f
                    .qualifiers
                    .iter()
                    .map(|q| (self.relation_name(q.relation), self.entity_name(q.entity).to_string()))
                    .collect(),
            })
            .collect()
    }

    pub fn raw_ti(&self) -> Vec<RawTiFact> {
        self.ti_facts
            .iter()
            .map(|f| RawTiFact {
                subject: self.entity_name(f.subject).to_string(),
                relation: self.ti_relations.name(f.relation.0).to_string(),
                object: self.entity_name(f.object).to_string(),
            })
            .collect()
    }
}

pub fn format_fact(f: &RawFact) -> String {
    let mut line = format!("{}\t{}\t{}\t{}", f.subject, f.relation, f.object, f.time);
    for (r, e) in &f.qualifiers {
        line.push('\t');
        line.push_str(r);
        line.push('\t');
        line.push_str(e);
    }
    line
}

pub fn write_fact_file(path: &Path, facts: &[RawFact]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for f in facts {
        writeln!(w, "{}", format_fact(f))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_ti_file(path: &Path, facts: &[RawTiFact]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for f in facts {
        writeln!(w, "{}\t{}\t{}", f.subject, f.relation, f.object)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the canonical on-disk form. Augmented datasets are rejected.
pub fn write_dataset(ds: &Dataset, dir: &Path, options: &LoadOptions) -> Result<Vec<PathBuf>> {
    if ds.is_augmented() {
        return Err(HtkgError::Invalid(
            "refusing to serialize an inverse-augmented dataset".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, facts) in [
        (&options.train_file, &ds.train),
        (&options.valid_file, &ds.valid),
        (&options.test_file, &ds.test),
    ] {
        let p = dir.join(name);
        write_fact_file(&p, &ds.raw_split(facts))?;
        written.push(p);
    }
    if !ds.ti_facts.is_empty() {
        let p = dir.join(&options.ti_file);
        write_ti_file(&p, &ds.raw_ti())?;
        written.push(p);
    }
    Ok(written)
}
