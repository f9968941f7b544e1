//! Run settings: defaults, then a `key = value` file, then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use htkg_core::train::TrainConfig;
use htkg_core::{ModelConfig, Preset};

use crate::UserError;

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "preset",
    "seed",
    "dim",
    "dropout",
    "use_time",
    "use_ti",
    "ti_inverse",
    "layers",
    "use_qualifiers",
    "use_qual_attention",
    "neighbor_cap",
    "use_matcher",
    "tf_layers",
    "heads",
    "ffn_mult",
    "max_subject_quals",
    "batch_size",
    "learning_rate",
    "epochs",
    "eval_every",
    "patience",
    "weight_decay",
    "grad_clip",
    "label_smoothing",
    "filter_qualifiers",
    "max_valid_queries",
    "workers",
];

#[derive(Debug, Clone, PartialEq)]
enum Origin {
    File(PathBuf, usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File(p, line) => write!(f, "{}:{line}", p.display()),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

/// Raw values by key with where each came from; later sources win.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    values: BTreeMap<String, (String, Origin)>,
}

impl Overrides {
    /// Reads a TOML-style file: `key = value` lines, `#` comments, optional
    /// quotes around values. `[section]` headers are accepted and ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError(format!("cannot read config {}: {e}", path.display())))?;
        let mut ov = Overrides::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UserError(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
            let k = k.trim().replace('-', "_");
            let v = v.trim().trim_matches('"').trim_matches('\'').to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(UserError(format!("{}:{}: unknown setting `{k}`", path.display(), i + 1)).into());
            }
            ov.values.insert(k, (v, Origin::File(path.to_path_buf(), i + 1)));
        }
        Ok(ov)
    }

    pub fn set_flag(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.values.insert(key.to_string(), (value.to_string(), Origin::Flag));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, origin)) => v
                .parse()
                .map(Some)
                .map_err(|e| UserError(format!("{origin}: bad value `{v}` for {key}: {e}")).into()),
        }
    }

    /// `none` clears an optional setting.
    fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<Option<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            Some((v, _)) if v == "none" => Ok(Some(None)),
            _ => Ok(self.get(key)?.map(Some)),
        }
    }
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub preset: Option<Preset>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Resolved {
    /// Applies `ov` over the given defaults. A preset pins its flags first;
    /// an explicit setting that contradicts the preset is an error.
    pub fn from_overrides(ov: &Overrides, mut model: ModelConfig, mut train: TrainConfig) -> Result<Self> {
        let preset: Option<Preset> = match ov.get::<String>("preset")? {
            Some(name) => Some(name.parse().map_err(|e| UserError(format!("{e}")))?),
            None => None,
        };
        if let Some(p) = preset {
            let mut clashes = Vec::new();
            for (key, pinned) in p.flags() {
                if let Some(v) = ov.get::<bool>(key)? {
                    if v != pinned {
                        let origin = &ov.values[key].1;
                        clashes.push(format!("{key}={v} ({origin}) but preset {p} sets {key}={pinned}"));
                    }
                }
            }
            if !clashes.is_empty() {
                return Err(UserError(format!("conflicting settings: {}", clashes.join("; "))).into());
            }
            p.apply(&mut model);
        }

        macro_rules! take {
            ($key:literal => $($field:tt)+) => {
                if let Some(v) = ov.get($key)? {
                    $($field)+ = v;
                }
            };
        }
        macro_rules! take_opt {
            ($key:literal => $($field:tt)+) => {
                if let Some(v) = ov.get_opt($key)? {
                    $($field)+ = v;
                }
            };
        }
        take!("dim" => model.dim);
        take!("dropout" => model.dropout);
        take!("use_time" => model.use_time);
        take!("use_ti" => model.use_ti);
        take!("ti_inverse" => model.ti_inverse);
        take!("layers" => model.encoder.layers);
        take!("use_qualifiers" => model.encoder.use_qualifiers);
        take!("use_qual_attention" => model.encoder.use_qual_attention);
        take!("neighbor_cap" => model.encoder.neighbor_cap);
        take!("use_matcher" => model.decoder.use_matcher);
        take!("tf_layers" => model.decoder.tf_layers);
        take!("heads" => model.decoder.heads);
        take!("ffn_mult" => model.decoder.ffn_mult);
        take!("max_subject_quals" => model.decoder.max_subject_quals);

        take!("seed" => train.seed);
        take!("batch_size" => train.batch_size);
        take!("learning_rate" => train.learning_rate);
        take!("epochs" => train.epochs);
        take!("eval_every" => train.eval_every);
        take_opt!("patience" => train.patience);
        take!("weight_decay" => train.weight_decay);
        take_opt!("grad_clip" => train.grad_clip);
        take!("label_smoothing" => train.label_smoothing);
        take!("filter_qualifiers" => train.filter_qualifiers);
        take_opt!("max_valid_queries" => train.max_valid_queries);
        take!("workers" => train.workers);

        model.validate().map_err(|e| UserError(e.to_string()))?;
        Ok(Self { preset, model, train })
    }
}

/// Model architecture and ablation flags.
#[derive(Args, Debug, Default, Clone)]
pub struct ModelFlags {
    /// One of full, psi, tau, variant-a, variant-b, variant-c.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub use_time: Option<bool>,
    #[arg(long)]
    pub use_ti: Option<bool>,
    #[arg(long)]
    pub ti_inverse: Option<bool>,
    /// Encoder aggregation layers (1 or 2).
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub use_qualifiers: Option<bool>,
    #[arg(long)]
    pub use_qual_attention: Option<bool>,
    #[arg(long)]
    pub neighbor_cap: Option<usize>,
    #[arg(long)]
    pub use_matcher: Option<bool>,
    #[arg(long)]
    pub tf_layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    #[arg(long)]
    pub max_subject_quals: Option<usize>,
}

impl ModelFlags {
    pub fn push_into(&self, ov: &mut Overrides) {
        macro_rules! push {
            ($($f:ident),*) => {
                $(if let Some(v) = &self.$f {
                    ov.set_flag(stringify!($f), v);
                })*
            };
        }
        push!(
            preset,
            dim,
            dropout,
            use_time,
            use_ti,
            ti_inverse,
            layers,
            use_qualifiers,
            use_qual_attention,
            neighbor_cap,
            use_matcher,
            tf_layers,
            heads,
            ffn_mult,
            max_subject_quals
        );
    }
}

/// Optimization schedule.
#[derive(Args, Debug, Default, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Validate every N epochs; 0 disables validation.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// Include qualifiers in the ranking filter key.
    #[arg(long)]
    pub filter_qualifiers: Option<bool>,
    #[arg(long)]
    pub max_valid_queries: Option<usize>,
}

impl TrainFlags {
    pub fn push_into(&self, ov: &mut Overrides) {
        macro_rules! push {
            ($($f:ident),*) => {
                $(if let Some(v) = &self.$f {
                    ov.set_flag(stringify!($f), v);
                })*
            };
        }
        push!(
            batch_size,
            learning_rate,
            epochs,
            eval_every,
            patience,
            weight_decay,
            grad_clip,
            label_smoothing,
            filter_qualifiers,
            max_valid_queries
        );
    }
}

/// Loads `--config` (if any) and layers the flags on top.
pub fn collect(config: Option<&Path>, push: impl FnOnce(&mut Overrides)) -> Result<Overrides> {
    let mut ov = match config {
        Some(p) => Overrides::from_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => Overrides::default(),
    };
    push(&mut ov);
    Ok(ov)
}

/// `key = value` dump of a resolved run, readable back through `--config`.
pub fn render(r: &Resolved) -> String {
    let m = &r.model;
    let t = &r.train;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    let mut lines = Vec::new();
    if let Some(p) = r.preset {
        lines.push(format!("preset = \"{p}\""));
    }
    lines.extend([
        format!("seed = {}", t.seed),
        format!("dim = {}", m.dim),
        format!("dropout = {}", m.dropout),
        format!("use_time = {}", m.use_time),
        format!("use_ti = {}", m.use_ti),
        format!("ti_inverse = {}", m.ti_inverse),
        format!("layers = {}", m.encoder.layers),
        format!("use_qualifiers = {}", m.encoder.use_qualifiers),
        format!("use_qual_attention = {}", m.encoder.use_qual_attention),
        format!("neighbor_cap = {}", m.encoder.neighbor_cap),
        format!("use_matcher = {}", m.decoder.use_matcher),
        format!("tf_layers = {}", m.decoder.tf_layers),
        format!("heads = {}", m.decoder.heads),
        format!("ffn_mult = {}", m.decoder.ffn_mult),
        format!("max_subject_quals = {}", m.decoder.max_subject_quals),
        format!("batch_size = {}", t.batch_size),
        format!("learning_rate = {}", t.learning_rate),
        format!("epochs = {}", t.epochs),
        format!("eval_every = {}", t.eval_every),
        format!("patience = {}", opt(t.patience.map(|v| v.to_string()))),
        format!("weight_decay = {}", t.weight_decay),
        format!("grad_clip = {}", opt(t.grad_clip.map(|v| v.to_string()))),
        format!("label_smoothing = {}", t.label_smoothing),
        format!("filter_qualifiers = {}", t.filter_qualifiers),
        format!(
            "max_valid_queries = {}",
            opt(t.max_valid_queries.map(|v| v.to_string()))
        ),
        format!("workers = {}", t.workers),
    ]);
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    fn resolve(ov: &Overrides) -> Result<Resolved> {
        Resolved::from_overrides(ov, ModelConfig::default(), TrainConfig::default())
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let (_d, p) = write("# comment\n[model]\ndim = 32\nheads = 2\nepochs = \"7\"\n");
        let mut ov = Overrides::from_file(&p).unwrap();
        let r = resolve(&ov).unwrap();
        assert_eq!((r.model.dim, r.train.epochs, r.train.batch_size), (32, 7, 256));
        ov.set_flag("dim", 16);
        let r = resolve(&ov).unwrap();
        assert_eq!((r.model.dim, r.model.decoder.heads), (16, 2));
    }

    #[test]
    fn unknown_key_and_bad_value_are_user_errors() {
        let (_d, p) = write("dimension = 4\n");
        let e = Overrides::from_file(&p).unwrap_err();
        assert!(e.downcast_ref::<UserError>().is_some());
        let (_d, p) = write("dim = many\n");
        let e = resolve(&Overrides::from_file(&p).unwrap()).unwrap_err();
        assert!(e.to_string().contains("run.conf:1"), "{e}");
    }

    #[test]
    fn preset_conflicts_are_reported() {
        let mut ov = Overrides::default();
        ov.set_flag("preset", "variant-a");
        ov.set_flag("use_qualifiers", true);
        let e = resolve(&ov).unwrap_err().to_string();
        assert!(e.contains("use_qualifiers=true") && e.contains("variant-a"), "{e}");
        // agreeing with the preset is fine
        let mut ov = Overrides::default();
        ov.set_flag("preset", "psi");
        ov.set_flag("use_ti", true);
        assert!(resolve(&ov).unwrap().model.use_ti);
    }

    #[test]
    fn render_round_trips() {
        let mut ov = Overrides::default();
        ov.set_flag("preset", "tau");
        ov.set_flag("dim", 24);
        ov.set_flag("patience", 3);
        ov.set_flag("heads", 3);
        let r = resolve(&ov).unwrap();
        let (_d, p) = write(&render(&r));
        let back = resolve(&Overrides::from_file(&p).unwrap()).unwrap();
        assert_eq!(back.model, r.model);
        assert_eq!(back.train.patience, Some(3));
        assert_eq!(back.preset, Some(Preset::Tau));
    }

    #[test]
    fn none_clears_optional() {
        let (_d, p) = write("patience = none\ngrad_clip = 5\n");
        let r = resolve(&Overrides::from_file(&p).unwrap()).unwrap();
        assert_eq!((r.train.patience, r.train.grad_clip), (None, Some(5.0)));
    }
}
