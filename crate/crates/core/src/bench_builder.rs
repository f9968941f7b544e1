//! Benchmark reconstruction from quadruple TKGs.
//!
//! Pipeline: optional split redistribution, relation mapping into Wikidata
//! properties, per-fact qualifier lookup via `wbgetclaims`, and TI-fact mining
//! for every primary entity. All requests go through a [`Transport`]; the
//! fixture transport replays a content-addressed cache so builds can run
//! offline and byte-for-byte reproducibly.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{format_fact, RawFact, RawTiFact};
use crate::error::{HtkgError, Result};

pub const DEFAULT_ENDPOINT: &str = "https://www.wikidata.org/w/api.php";
pub const FIXTURE_DIR_ENV: &str = "HTKG_FIXTURE_DIR";

const START_TIME: &str = "P580";
const END_TIME: &str = "P582";
const POINT_IN_TIME: &str = "P585";

/// A primary temporal fact without qualifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuadFact {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub time: i64,
}

/// Parses `s<TAB>r<TAB>o<TAB>t` lines; extra columns are ignored.
pub fn parse_quadruples(text: &str, file: &Path) -> Result<Vec<QuadFact>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| HtkgError::Parse {
            file: file.to_path_buf(),
            line: i + 1,
            msg,
        };
        if cols.len() < 4 {
            return Err(err(format!("expected at least 4 columns, found {}", cols.len())));
        }
        let time = cols[3]
            .trim()
            .parse::<i64>()
            .map_err(|e| err(format!("bad timestamp `{}`: {e}", cols[3])))?;
        out.push(QuadFact {
            subject: cols[0].to_string(),
            relation: cols[1].to_string(),
            object: cols[2].to_string(),
            time,
        });
    }
    Ok(out)
}

pub fn read_quadruples(path: &Path) -> Result<Vec<QuadFact>> {
    parse_quadruples(&fs::read_to_string(path)?, path)
}

/// Source relation → (Wikidata property, swap subject and object).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMapping {
    map: BTreeMap<String, (String, bool)>,
}

impl RelationMapping {
    /// The ten YAGO relations and their Wikidata properties.
    pub fn yago() -> Self {
        let rows = [
            ("wasBornIn", "P19", false),
            ("diedIn", "P20", false),
            ("worksAt", "P108", false),
            ("playsFor", "P54", false),
            ("hasWonPrize", "P166", false),
            ("isMarriedTo", "P26", false),
            ("owns", "P127", true),
            ("graduatedFrom", "P69", false),
            ("isAffiliatedTo", "P102", false),
            ("created", "P800", false),
        ];
        Self {
            map: rows
                .iter()
                .map(|(k, p, inv)| (k.to_string(), (p.to_string(), *inv)))
                .collect(),
        }
    }

    pub fn get(&self, relation: &str) -> Option<(&str, bool)> {
        self.map.get(relation).map(|(p, inv)| (p.as_str(), *inv))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, bool)> {
        self.map.iter().map(|(k, (p, inv))| (k.as_str(), p.as_str(), *inv))
    }
}

/// Rewrites relations into property ids; inverted rows swap the endpoints.
pub fn map_relations(facts: &[QuadFact], mapping: &RelationMapping) -> Result<Vec<QuadFact>> {
    let mut missing: Vec<String> = facts
        .iter()
        .filter(|f| mapping.get(&f.relation).is_none())
        .map(|f| f.relation.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(HtkgError::UnmappedRelations(missing));
    }
    Ok(facts
        .iter()
        .map(|f| {
            let (pid, inverted) = mapping.get(&f.relation).expect("checked above");
            let (subject, object) = if inverted {
                (f.object.clone(), f.subject.clone())
            } else {
                (f.subject.clone(), f.object.clone())
            };
            QuadFact {
                subject,
                relation: pid.to_string(),
                object,
                time: f.time,
            }
        })
        .collect())
}

/// Ordered TI relations as `(name, property id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiRelationSet {
    pub relations: Vec<(String, String)>,
}

impl Default for TiRelationSet {
    fn default() -> Self {
        let rows = [
            ("family name", "P734"),
            ("native language", "P103"),
            ("subclass of", "P279"),
            ("official language", "P37"),
            ("child", "P40"),
            ("sibling", "P3373"),
            ("father", "P22"),
            ("mother", "P25"),
            ("ethnic group", "P172"),
            ("country of origin", "P495"),
        ];
        Self {
            relations: rows.iter().map(|(n, p)| (n.to_string(), p.to_string())).collect(),
        }
    }
}

impl TiRelationSet {
    pub fn names(&self) -> Vec<&str> {
        self.relations.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn name_of(&self, pid: &str) -> Option<&str> {
        self.relations.iter().find(|(_, p)| p == pid).map(|(n, _)| n.as_str())
    }
}

/// A GET request against the action API, identified by its sorted parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub params: BTreeMap<String, String>,
}

impl ApiRequest {
    pub fn claims(entity: &str, property: &str) -> Self {
        let mut params = BTreeMap::new();
        params.insert("action".to_string(), "wbgetclaims".to_string());
        params.insert("format".to_string(), "json".to_string());
        params.insert("entity".to_string(), entity.to_string());
        params.insert("property".to_string(), property.to_string());
        Self { params }
    }

    /// `k1=v1&k2=v2` with keys sorted.
    pub fn canonical(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("&")
    }

    /// Content address of the request: hex SHA-256 of [`Self::canonical`].
    pub fn cache_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Throttled; retry later.
    RateLimited,
    /// Anything else, possibly transient.
    Failed(String),
    /// Not retryable (for example a missing fixture).
    Fatal(String),
}

/// Fetches raw response bodies.
pub trait Transport: Send + Sync {
    fn get(&self, req: &ApiRequest) -> std::result::Result<String, TransportFailure>;
}

/// Replays `<dir>/<cache_key>.json`; optionally forwards misses to `inner`
/// and records the response.
pub struct FixtureTransport {
    dir: PathBuf,
    inner: Option<Box<dyn Transport>>,
}

impl FixtureTransport {
    pub fn offline(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            inner: None,
        }
    }

    pub fn recording(dir: impl Into<PathBuf>, inner: Box<dyn Transport>) -> Self {
        Self {
            dir: dir.into(),
            inner: Some(inner),
        }
    }

    pub fn path_for(&self, req: &ApiRequest) -> PathBuf {
        self.dir.join(format!("{}.json", req.cache_key()))
    }

    /// Stores a response body under the request's content address.
    pub fn put(&self, req: &ApiRequest, body: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let p = self.path_for(req);
        fs::write(&p, body)?;
        Ok(p)
    }
}

impl Transport for FixtureTransport {
    fn get(&self, req: &ApiRequest) -> std::result::Result<String, TransportFailure> {
        let p = self.path_for(req);
        match fs::read_to_string(&p) {
            Ok(body) => Ok(body),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => match &self.inner {
                Some(inner) => {
                    let body = inner.get(req)?;
                    self.put(req, &body)
                        .map_err(|e| TransportFailure::Fatal(e.to_string()))?;
                    Ok(body)
                }
                None => Err(TransportFailure::Fatal(format!("fixture missing: {}", req.canonical()))),
            },
            Err(e) => Err(TransportFailure::Fatal(e.to_string())),
        }
    }
}

/// HTTP transport with minimum spacing between calls.
pub struct LiveTransport {
    endpoint: String,
    agent: ureq::Agent,
    pacing: Duration,
    last: Mutex<Option<Instant>>,
}

impl LiveTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            pacing: Duration::from_millis(100),
            last: Mutex::new(None),
        }
    }

    pub fn with_pacing(mut self, pacing: Duration) -> Self {
        self.pacing = pacing;
        self
    }
}

impl Transport for LiveTransport {
    fn get(&self, req: &ApiRequest) -> std::result::Result<String, TransportFailure> {
        {
            // Holding the lock across the sleep serializes callers so that
            // spacing holds even with several workers.
            let mut last = self.last.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(t) = *last {
                let since = t.elapsed();
                if since < self.pacing {
                    std::thread::sleep(self.pacing - since);
                }
            }
            *last = Some(Instant::now());
        }
        let mut resp = self
            .agent
            .get(&self.endpoint)
            .query_pairs(req.params.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .header(
                "User-Agent",
                "htkg-bench-builder/0.1 (research benchmark reconstruction)",
            )
            .call()
            .map_err(|e| TransportFailure::Failed(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status == 503 {
            return Err(TransportFailure::RateLimited);
        }
        if !(200..300).contains(&status) {
            return Err(TransportFailure::Failed(format!("http status {status}")));
        }
        resp.body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Failed(e.to_string()))
    }
}

/// Plays back a fixed sequence of outcomes, then repeats the last one.
pub struct ScriptedTransport {
    script: Mutex<VecDeque<std::result::Result<String, TransportFailure>>>,
    calls: Mutex<usize>,
}

impl ScriptedTransport {
    pub fn new(script: Vec<std::result::Result<String, TransportFailure>>) -> Self {
        Self {
            script: Mutex::new(script.into()),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl Transport for ScriptedTransport {
    fn get(&self, _req: &ApiRequest) -> std::result::Result<String, TransportFailure> {
        *self.calls.lock().unwrap() += 1;
        let mut s = self.script.lock().unwrap();
        if s.len() > 1 {
            s.pop_front().unwrap()
        } else {
            s.front()
                .cloned()
                .unwrap_or_else(|| Err(TransportFailure::Fatal("script exhausted".into())))
        }
    }
}

/// Retrying JSON client over a transport.
pub struct ApiClient {
    transport: Box<dyn Transport>,
    pub retries: usize,
    pub backoff: Duration,
}

impl ApiClient {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self {
            transport,
            retries: 5,
            backoff: Duration::from_millis(500),
        }
    }

    /// Offline client reading from a fixture directory.
    pub fn fixtures(dir: impl Into<PathBuf>) -> Self {
        Self::new(Box::new(FixtureTransport::offline(dir)))
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Fetches and parses a response, retrying throttled or failed calls with
    /// exponential backoff. API-level `maxlag`/`ratelimited` errors count as
    /// throttling.
    pub fn request(&self, req: &ApiRequest) -> Result<Value> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                let wait = self.backoff.saturating_mul(1 << (attempt - 1).min(16));
                log::debug!("retry {attempt} for {} after {wait:?}: {last}", req.canonical());
                std::thread::sleep(wait);
            }
            match self.transport.get(req) {
                Ok(body) => {
                    let v: Value = serde_json::from_str(&body)
                        .map_err(|e| HtkgError::MalformedResponse(format!("{}: {e}", req.canonical())))?;
                    let code = v.pointer("/error/code").and_then(Value::as_str);
                    if matches!(code, Some("maxlag" | "ratelimited")) {
                        last = "throttled by API".into();
                        continue;
                    }
                    return Ok(v);
                }
                Err(TransportFailure::RateLimited) => last = "rate limited".into(),
                Err(TransportFailure::Failed(e)) => last = e,
                Err(TransportFailure::Fatal(e)) => {
                    return Err(if e.starts_with("fixture missing") {
                        HtkgError::FixtureMissing(req.canonical())
                    } else {
                        HtkgError::Transport(e)
                    })
                }
            }
        }
        Err(HtkgError::Transport(format!(
            "{}: giving up after {} attempts: {last}",
            req.canonical(),
            self.retries + 1
        )))
    }
}

/// One statement from a `wbgetclaims` response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub property: String,
    /// Item id of the main value; `None` for non-item values.
    pub value: Option<String>,
    /// Item-valued qualifiers in statement order.
    pub qualifiers: Vec<(String, String)>,
    /// Validity in years from start/end/point-in-time qualifiers.
    pub start_year: Option<i64>,
    pub end_year: Option<i64>,
    pub deprecated: bool,
}

impl Statement {
    /// Year-granularity overlap; statements without time bounds always match.
    pub fn valid_in(&self, year: i64) -> bool {
        self.start_year.is_none_or(|s| s <= year) && self.end_year.is_none_or(|e| year <= e)
    }
}

fn item_id(snak: &Value) -> Option<String> {
    if snak.get("snaktype").and_then(Value::as_str) != Some("value") {
        return None;
    }
    let dv = snak.get("datavalue")?;
    if dv.get("type").and_then(Value::as_str) != Some("wikibase-entityid") {
        return None;
    }
    let v = dv.get("value")?;
    v.get("id").and_then(Value::as_str).map(str::to_string).or_else(|| {
        let n = v.get("numeric-id")?.as_u64()?;
        Some(format!("Q{n}"))
    })
}

fn year_of(snak: &Value) -> Option<i64> {
    let t = snak.pointer("/datavalue/value/time")?.as_str()?;
    // "+1990-00-00T00:00:00Z" / "-0044-03-15T00:00:00Z"
    let (sign, rest) = match t.as_bytes().first()? {
        b'-' => (-1, &t[1..]),
        b'+' => (1, &t[1..]),
        _ => (1, t),
    };
    let year: i64 = rest.split('-').next()?.parse().ok()?;
    Some(sign * year)
}

fn malformed(req: &str, what: &str) -> HtkgError {
    HtkgError::MalformedResponse(format!("{req}: {what}"))
}

/// Parses the statements of a `wbgetclaims` response. API errors about
/// unknown or invalid entities yield no statements.
pub fn parse_claims(resp: &Value, req: &str) -> Result<Vec<Statement>> {
    if let Some(code) = resp.pointer("/error/code").and_then(Value::as_str) {
        return match code {
            "no-such-entity" | "invalid-entity-id" | "param-invalid" => Ok(Vec::new()),
            other => Err(malformed(req, &format!("api error `{other}`"))),
        };
    }
    let claims = resp.get("claims").ok_or_else(|| malformed(req, "no `claims` field"))?;
    // The API encodes "no claims" as an empty array rather than an object.
    if claims.as_array().is_some_and(Vec::is_empty) {
        return Ok(Vec::new());
    }
    let claims = claims
        .as_object()
        .ok_or_else(|| malformed(req, "`claims` is not an object"))?;
    let mut out = Vec::new();
    for (pid, list) in claims {
        let list = list
            .as_array()
            .ok_or_else(|| malformed(req, "claim list is not an array"))?;
        for st in list {
            let main = st
                .get("mainsnak")
                .ok_or_else(|| malformed(req, "statement without mainsnak"))?;
            let quals = st.get("qualifiers").and_then(Value::as_object);
            let order: Vec<String> = match st.get("qualifiers-order").and_then(Value::as_array) {
                Some(o) => o.iter().filter_map(|x| x.as_str().map(str::to_string)).collect(),
                None => quals.map(|q| q.keys().cloned().collect()).unwrap_or_default(),
            };
            let mut qualifiers = Vec::new();
            let (mut start, mut end) = (None, None);
            for qp in &order {
                let Some(snaks) = quals.and_then(|q| q.get(qp)).and_then(Value::as_array) else {
                    continue;
                };
                for s in snaks {
                    match qp.as_str() {
                        START_TIME => start = year_of(s).or(start),
                        END_TIME => end = year_of(s).or(end),
                        POINT_IN_TIME => {
                            if let Some(y) = year_of(s) {
                                start = Some(y);
                                end = Some(y);
                            }
                        }
                        _ => {}
                    }
                    if let Some(id) = item_id(s) {
                        qualifiers.push((qp.clone(), id));
                    }
                }
            }
            out.push(Statement {
                property: pid.clone(),
                value: item_id(main),
                qualifiers,
                start_year: start,
                end_year: end,
                deprecated: st.get("rank").and_then(Value::as_str) == Some("deprecated"),
            });
        }
    }
    Ok(out)
}

/// Qualifiers of the first statement matching `(s, p, o)` whose validity
/// overlaps the fact's year. No match yields an empty list.
pub fn fetch_qualifiers(fact: &QuadFact, client: &ApiClient) -> Result<Vec<(String, String)>> {
    let req = ApiRequest::claims(&fact.subject, &fact.relation);
    let resp = client.request(&req)?;
    let statements = parse_claims(&resp, &req.canonical())?;
    Ok(statements
        .into_iter()
        .find(|s| {
            !s.deprecated
                && s.property == fact.relation
                && s.value.as_deref() == Some(&fact.object)
                && s.valid_in(fact.time)
        })
        .map(|s| s.qualifiers)
        .unwrap_or_default())
}

/// TI triples for each entity and relation, deduplicated in first-seen order
/// and disjoint from `exclude`.
pub fn mine_ti_facts(
    entities: &[String],
    relations: &TiRelationSet,
    client: &ApiClient,
    exclude: &HashSet<(String, String, String)>,
    max_in_flight: usize,
) -> Result<Vec<RawTiFact>> {
    let jobs: Vec<(&str, &str)> = entities
        .iter()
        .flat_map(|e| relations.relations.iter().map(move |(_, p)| (e.as_str(), p.as_str())))
        .collect();
    let found = ordered_map(&jobs, max_in_flight, |&(e, p)| {
        let req = ApiRequest::claims(e, p);
        let resp = client.request(&req)?;
        Ok(parse_claims(&resp, &req.canonical())?
            .into_iter()
            .filter(|s| !s.deprecated && s.property == p)
            .filter_map(|s| s.value)
            .map(|o| RawTiFact {
                subject: e.to_string(),
                relation: p.to_string(),
                object: o,
            })
            .collect::<Vec<_>>())
    })?;
    let mut seen = HashSet::new();
    Ok(found
        .into_iter()
        .flatten()
        .filter(|f| !exclude.contains(&(f.subject.clone(), f.relation.clone(), f.object.clone())))
        .filter(|f| seen.insert(f.clone()))
        .collect())
}

/// Maps `f` over `items` with at most `max_in_flight` concurrent calls;
/// results keep input order and the first error (by index) wins.
pub fn ordered_map<T: Sync, U: Send>(
    items: &[T],
    max_in_flight: usize,
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| HtkgError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<U>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

/// Shuffles all facts under `seed` and cuts them by `ratios` (train, valid,
/// test). Valid and test sizes are rounded; train takes the remainder.
pub fn redistribute_splits<T: Clone>(facts: &[T], ratios: [f64; 3], seed: u64) -> Result<[Vec<T>; 3]> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(HtkgError::Invalid(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = facts.len();
    let n_valid = (n as f64 * ratios[1]).round() as usize;
    let n_test = ((n as f64 * ratios[2]).round() as usize).min(n - n_valid);
    let n_train = n - n_valid - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| facts[i].clone()).collect::<Vec<_>>();
    Ok([
        take(0..n_train),
        take(n_train..n_train + n_valid),
        take(n_train + n_valid..n),
    ])
}

/// Ratios proportional to the given split sizes.
pub fn ratios_of(sizes: [usize; 3]) -> [f64; 3] {
    let n: usize = sizes.iter().sum();
    let n = n.max(1) as f64;
    [sizes[0] as f64 / n, sizes[1] as f64 / n, sizes[2] as f64 / n]
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// Relation mapping for non-Wikidata sources.
    pub mapping: Option<RelationMapping>,
    /// Merge and re-split the source (extrapolation → interpolation), keeping
    /// the source's split proportions.
    pub redistribute: bool,
    pub ti_relations: TiRelationSet,
    /// Skip TI mining entirely.
    pub mine_ti: bool,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            mapping: None,
            redistribute: false,
            ti_relations: TiRelationSet::default(),
            mine_ti: true,
            seed: 0,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltBenchmark {
    pub train: Vec<RawFact>,
    pub valid: Vec<RawFact>,
    pub test: Vec<RawFact>,
    pub ti: Vec<RawTiFact>,
}

impl BuiltBenchmark {
    /// Writes `train.txt`, `valid.txt`, `test.txt`, `ti.txt` and the
    /// vocabulary files `entities.txt` and `relations.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, facts) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let mut s = String::new();
            for f in facts {
                s.push_str(&format_fact(f));
                s.push('\n');
            }
            let p = dir.join(name);
            fs::write(&p, s)?;
            written.push(p);
        }
        let mut s = String::new();
        for f in &self.ti {
            s.push_str(&format!("{}\t{}\t{}\n", f.subject, f.relation, f.object));
        }
        let p = dir.join("ti.txt");
        fs::write(&p, s)?;
        written.push(p);

        let (entities, relations) = self.vocabularies();
        for (name, v) in [("entities.txt", entities), ("relations.txt", relations)] {
            let p = dir.join(name);
            fs::write(&p, v.iter().map(|x| format!("{x}\n")).collect::<String>())?;
            written.push(p);
        }
        Ok(written)
    }

    /// First-seen entity and relation names over all facts, TI last.
    pub fn vocabularies(&self) -> (Vec<String>, Vec<String>) {
        let mut ents = FirstSeen::default();
        let mut rels = FirstSeen::default();
        for f in self.train.iter().chain(&self.valid).chain(&self.test) {
            ents.push(&f.subject);
            rels.push(&f.relation);
            ents.push(&f.object);
            for (r, e) in &f.qualifiers {
                rels.push(r);
                ents.push(e);
            }
        }
        for f in &self.ti {
            ents.push(&f.subject);
            rels.push(&f.relation);
            ents.push(&f.object);
        }
        (ents.items, rels.items)
    }
}

/// Insertion-ordered set of names.
#[derive(Default)]
struct FirstSeen {
    items: Vec<String>,
    seen: HashSet<String>,
}

impl FirstSeen {
    fn push(&mut self, s: &str) {
        if self.seen.insert(s.to_string()) {
            self.items.push(s.to_string());
        }
    }
}

/// Full reconstruction from source splits.
pub fn build_benchmark(source: [Vec<QuadFact>; 3], cfg: &BuildConfig, client: &ApiClient) -> Result<BuiltBenchmark> {
    let splits = if cfg.redistribute {
        let ratios = ratios_of([source[0].len(), source[1].len(), source[2].len()]);
        let all: Vec<QuadFact> = source.concat();
        redistribute_splits(&all, ratios, cfg.seed)?
    } else {
        source
    };
    let splits = match &cfg.mapping {
        Some(m) => [
            map_relations(&splits[0], m)?,
            map_relations(&splits[1], m)?,
            map_relations(&splits[2], m)?,
        ],
        None => splits,
    };

    let mut out: Vec<Vec<RawFact>> = Vec::with_capacity(3);
    for split in &splits {
        let quals = ordered_map(split, cfg.max_in_flight, |f| fetch_qualifiers(f, client))?;
        out.push(
            split
                .iter()
                .zip(quals)
                .map(|(f, q)| RawFact {
                    subject: f.subject.clone(),
                    relation: f.relation.clone(),
                    object: f.object.clone(),
                    time: f.time,
                    qualifiers: q,
                })
                .collect(),
        );
    }
    let test = out.pop().unwrap_or_default();
    let valid = out.pop().unwrap_or_default();
    let train = out.pop().unwrap_or_default();
    let mut built = BuiltBenchmark {
        train,
        valid,
        test,
        ti: Vec::new(),
    };

    if cfg.mine_ti {
        let all = built.train.iter().chain(&built.valid).chain(&built.test);
        let mut used_relations = HashSet::new();
        let mut primary = HashSet::new();
        let mut entities = FirstSeen::default();
        for f in all {
            entities.push(&f.subject);
            entities.push(&f.object);
            used_relations.insert(f.relation.clone());
            used_relations.extend(f.qualifiers.iter().map(|(r, _)| r.clone()));
            primary.insert((f.subject.clone(), f.relation.clone(), f.object.clone()));
        }
        // TI relations must stay disjoint from every HTKG relation.
        let relations = TiRelationSet {
            relations: cfg
                .ti_relations
                .relations
                .iter()
                .filter(|(name, pid)| {
                    let clash = used_relations.contains(pid);
                    if clash {
                        log::warn!("dropping TI relation {name} ({pid}): it occurs in HTKG facts");
                    }
                    !clash
                })
                .cloned()
                .collect(),
        };
        built.ti = mine_ti_facts(&entities.items, &relations, client, &primary, cfg.max_in_flight)?;
    }
    Ok(built)
}
