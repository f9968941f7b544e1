//! Training with 1-vs-all logistic BCE and Adam.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_queries, Dataset, Split};
use crate::error::{HtkgError, Result};
use crate::eval::{evaluate, EvalOptions, RankReport};
use crate::model::{GraphContext, Model, ModelConfig, ModelSizes};
use crate::tensor::{read_checkpoint, write_checkpoint, Gradients, Graph, Matrix, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
    pub weight_decay: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub grad_clip: Option<f64>,
    pub label_smoothing: f64,
    pub filter_qualifiers: bool,
    /// Cap on validation queries per evaluation.
    pub max_valid_queries: Option<usize>,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            epochs: 100,
            seed: 0,
            eval_every: 1,
            patience: None,
            weight_decay: 0.0,
            grad_clip: None,
            label_smoothing: 0.0,
            filter_qualifiers: true,
            max_valid_queries: None,
            workers: 0,
        }
    }
}

/// Mean logistic BCE of one score vector against a single true index.
pub fn bce_loss(scores: &[f64], truth: usize) -> f64 {
    let mut g = Graph::new(false);
    let x = g.constant(Matrix::row_vector(scores.to_vec()));
    let l = g.bce_with_logits(x, &[truth]);
    g.value(l).item()
}

/// BCE with smoothed targets `y·(1−ε) + ε/N`, built from primitives.
fn smoothed_bce(g: &mut Graph, logits: Var, truth: &[usize], eps: f64) -> Var {
    if eps == 0.0 {
        return g.bce_with_logits(logits, truth);
    }
    let (b, n) = g.shape(logits);
    let mut y = Matrix::filled(b, n, eps / n as f64);
    for (r, &t) in truth.iter().enumerate() {
        y.set(r, t, 1.0 - eps + eps / n as f64);
    }
    // softplus(x) − y·x, with softplus via log(1 + e^x) = x + log σ(−x) ... kept simple:
    // ℓ = −y log σ(x) − (1−y) log σ(−x) = BCE(x, onehot) + (onehot − y)·x
    let base = g.bce_with_logits(logits, truth);
    let mut onehot = Matrix::zeros(b, n);
    for (r, &t) in truth.iter().enumerate() {
        onehot.set(r, t, 1.0);
    }
    let diff = Matrix::from_vec(
        b,
        n,
        onehot
            .data()
            .iter()
            .zip(y.data())
            .map(|(o, v)| (o - v) / (b * n) as f64)
            .collect(),
    );
    let d = g.constant(diff);
    let corr = g.mul(d, logits);
    let corr = g.sum(corr);
    g.add(base, corr)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            if !store.get(id).trainable {
                continue;
            }
            let (r, c) = g.shape();
            let m = self.m[id.0].get_or_insert_with(|| Matrix::zeros(r, c));
            let v = self.v[id.0].get_or_insert_with(|| Matrix::zeros(r, c));
            let p = store.value_mut(id).data_mut();
            for (((pi, &grad), mi), vi) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = grad + self.weight_decay * *pi;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *pi -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: Option<RankReport>,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,valid_MRR,valid_H1,valid_H3,valid_H10,wall_seconds";

    pub fn csv_row(&self) -> String {
        let v = |f: fn(&RankReport) -> f64| self.valid.as_ref().map(|r| format!("{:.6}", f(r))).unwrap_or_default();
        format!(
            "{},{:.8},{},{},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            v(|r| r.mrr),
            v(|r| r.hits1),
            v(|r| r.hits3),
            v(|r| r.hits10),
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    /// Parameters at the best validation (or the last epoch without validation).
    pub best_params: ParamStore,
}

/// JSON sidecar written next to every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub sizes: ModelSizes,
    pub train: TrainConfig,
    pub epoch: usize,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub valid_mrr: Option<f64>,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const META_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn save_checkpoint(dir: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_checkpoint(store, &dir.join(CHECKPOINT_FILE))?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Rebuilds a model from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let store = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(meta.model.clone(), meta.sizes, &mut rng)?;
    model.load_params(&store)?;
    Ok((model, meta))
}

/// Where training writes artifacts; all optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

/// Trains `model` on the augmented training split. Deterministic given
/// `cfg.seed`. A non-finite batch loss aborts with the batch written to
/// `nonfinite_batch.json` in the output directory.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    ctx: &GraphContext,
    cfg: &TrainConfig,
    out: &TrainOutput,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if !ds.is_augmented() {
        return Err(HtkgError::NotAugmented);
    }
    if cfg.batch_size == 0 {
        return Err(HtkgError::Invalid("batch size must be positive".into()));
    }
    let queries = derive_queries(&ds.train);
    if queries.is_empty() {
        return Err(HtkgError::EmptySplit("train".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    adam.weight_decay = cfg.weight_decay;
    let n_params = model.store.len();

    let mut csv = match &out.dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            let mut f = fs::File::create(d.join(METRICS_FILE))?;
            writeln!(f, "{}", EpochMetrics::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };

    let start = Instant::now();
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize)> = None;
    let mut best_params = model.store.clone();
    let mut stale = 0;
    let validate = cfg.eval_every > 0 && !ds.valid.is_empty();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| queries[i].clone()).collect();
            let mut g = Graph::new(true);
            let reps = model.encode(&mut g, ctx, &mut rng);
            let dec = model.decode(&mut g, ctx, reps, &batch, &mut rng);
            let truth: Vec<usize> = batch.iter().map(|q| q.ground_truth.0).collect();
            let loss = smoothed_bce(&mut g, dec.scores, &truth, cfg.label_smoothing);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                log::error!("non-finite loss {lv} at epoch {epoch}, batch {bi}");
                if let Some(d) = &out.dir {
                    let dump = serde_json::json!({
                        "epoch": epoch,
                        "batch": bi,
                        "loss": lv.to_string(),
                        "queries": batch.iter().map(|q| format!("{q:?}")).collect::<Vec<_>>(),
                    });
                    fs::write(d.join("nonfinite_batch.json"), serde_json::to_string_pretty(&dump)?)?;
                }
                return Err(HtkgError::NonFiniteLoss { epoch, batch: bi });
            }
            total += lv * batch.len() as f64;
            let mut grads = g.backward(loss, n_params);
            if let Some(c) = cfg.grad_clip {
                let n = grads.global_norm();
                if n > c {
                    grads.scale(c / n);
                }
            }
            adam.step(&mut model.store, &grads);
        }
        let train_loss = total / queries.len() as f64;

        let valid = if validate && epoch % cfg.eval_every == 0 {
            let opts = EvalOptions {
                filter_qualifiers: cfg.filter_qualifiers,
                workers: cfg.workers,
                seed: cfg.seed,
                max_queries: cfg.max_valid_queries,
                ..EvalOptions::default()
            };
            Some(evaluate(model, ds, ctx, Split::Valid, &opts)?.0)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch,
            train_loss,
            valid,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("{}", m.csv_row());
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", m.csv_row())?;
        }
        on_epoch(&m);

        let improved = match (&m.valid, best) {
            (Some(r), Some((b, _))) => r.mrr > b,
            (Some(_), None) => true,
            (None, _) => !validate,
        };
        if improved {
            best = m.valid.as_ref().map(|r| (r.mrr, epoch)).or(Some((f64::NAN, epoch)));
            best_params = model.store.clone();
            stale = 0;
            if let Some(d) = &out.dir {
                let meta = CheckpointMeta {
                    model: model.config.clone(),
                    sizes: model.sizes,
                    train: cfg.clone(),
                    epoch,
                    rng_seed: cfg.seed,
                    rng_word_pos: rng.get_word_pos(),
                    valid_mrr: m.valid.as_ref().map(|r| r.mrr),
                };
                save_checkpoint(d, &model.store, &meta)?;
            }
        } else if m.valid.is_some() {
            stale += 1;
        }
        history.push(m);
        if let Some(p) = cfg.patience {
            if stale >= p {
                log::info!("early stop after {epoch} epochs");
                break;
            }
        }
    }

    let (best_mrr, best_epoch) = best.unwrap_or((f64::NAN, history.len()));
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_valid_mrr: (!best_mrr.is_nan()).then_some(best_mrr),
        best_params,
    })
}
