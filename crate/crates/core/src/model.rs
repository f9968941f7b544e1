//! Model configuration, parameter construction and the encode/decode driver.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_subject_qualifier_index, build_temporal_index, build_ti_index, Dataset, LpQuery, SubjectQualifierIndex,
    TemporalNeighborIndex, TiNeighborIndex,
};
use crate::decoder::{self, AttentionRecord, DecodeOutput, DecoderParams};
use crate::encoder::{self, EncoderParams};
use crate::error::{HtkgError, Result};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Aggregation layers, 1 or 2.
    pub layers: usize,
    /// Off for variant A: qualifiers are ignored everywhere.
    pub use_qualifiers: bool,
    /// Off for variant B: qualifier features are averaged instead of attended.
    pub use_qual_attention: bool,
    /// Max temporal (and TI) neighbors per entity per layer.
    pub neighbor_cap: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            use_qualifiers: true,
            use_qual_attention: true,
            neighbor_cap: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Off for variant C: the global qualifier feature is zero.
    pub use_matcher: bool,
    pub tf_layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ffn_mult: usize,
    /// Cap on the subject-related qualifier pool (and TI tokens per subject).
    pub max_subject_quals: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            use_matcher: true,
            tf_layers: 2,
            heads: 4,
            ffn_mult: 2,
            max_subject_quals: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub dropout: f64,
    /// Off for the time-agnostic variant.
    pub use_time: bool,
    /// On for the TI-knowledge variant.
    pub use_ti: bool,
    /// Index TI facts in both directions.
    pub ti_inverse: bool,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            dropout: 0.3,
            use_time: true,
            use_ti: false,
            ti_inverse: true,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(HtkgError::Invalid(format!(
                "dim must be even and positive, got {}",
                self.dim
            )));
        }
        if !(1..=2).contains(&self.encoder.layers) {
            return Err(HtkgError::Invalid(format!(
                "encoder layers must be 1 or 2, got {}",
                self.encoder.layers
            )));
        }
        if self.decoder.heads == 0 || !self.dim.is_multiple_of(self.decoder.heads) {
            return Err(HtkgError::Invalid(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.decoder.heads
            )));
        }
        if self.decoder.tf_layers == 0 || self.decoder.ffn_mult == 0 {
            return Err(HtkgError::Invalid(
                "transformer needs at least one layer and a positive width".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HtkgError::Invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.encoder.neighbor_cap == 0 {
            return Err(HtkgError::Invalid("neighbor cap must be positive".into()));
        }
        Ok(())
    }

    pub fn from_preset(preset: Preset) -> Self {
        let mut c = Self::default();
        preset.apply(&mut c);
        c
    }
}

/// Named flag bundles for the model and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Full,
    Psi,
    Tau,
    VariantA,
    VariantB,
    VariantC,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Full,
        Preset::Psi,
        Preset::Tau,
        Preset::VariantA,
        Preset::VariantB,
        Preset::VariantC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Psi => "psi",
            Preset::Tau => "tau",
            Preset::VariantA => "variant-a",
            Preset::VariantB => "variant-b",
            Preset::VariantC => "variant-c",
        }
    }

    /// Sets exactly the flags this preset controls, leaving sizes alone.
    pub fn apply(self, c: &mut ModelConfig) {
        c.use_time = self != Preset::Tau;
        c.use_ti = self == Preset::Psi;
        c.encoder.use_qualifiers = self != Preset::VariantA;
        c.encoder.use_qual_attention = !matches!(self, Preset::VariantA | Preset::VariantB);
        c.decoder.use_matcher = !matches!(self, Preset::VariantA | Preset::VariantC);
    }

    /// Flag values this preset pins, as `(name, value)`.
    pub fn flags(self) -> [(&'static str, bool); 5] {
        let mut c = ModelConfig::default();
        self.apply(&mut c);
        [
            ("use_time", c.use_time),
            ("use_ti", c.use_ti),
            ("use_qualifiers", c.encoder.use_qualifiers),
            ("use_qual_attention", c.encoder.use_qual_attention),
            ("use_matcher", c.decoder.use_matcher),
        ]
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = HtkgError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            HtkgError::Invalid(format!(
                "unknown preset `{s}` (expected full, psi, tau, variant-a, variant-b, variant-c)"
            ))
        })
    }
}

/// Vocabulary sizes a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSizes {
    /// Candidate (HTKG) entities; they occupy ids `0..n_entities`.
    pub n_entities: usize,
    /// HTKG plus TI-only entities.
    pub n_all_entities: usize,
    /// Relations including inverses.
    pub n_relations: usize,
    /// TI relations including inverses when indexed both ways.
    pub n_ti_relations: usize,
    pub n_times: usize,
}

impl ModelSizes {
    pub fn of(ds: &Dataset, cfg: &ModelConfig) -> Result<Self> {
        if !ds.is_augmented() {
            return Err(HtkgError::NotAugmented);
        }
        let n_ti = ds.num_ti_relations();
        Ok(Self {
            n_entities: ds.num_entities(),
            n_all_entities: ds.num_all_entities(),
            n_relations: ds.num_relations(),
            n_ti_relations: if cfg.ti_inverse { 2 * n_ti } else { n_ti },
            n_times: ds.num_times(),
        })
    }
}

/// Neighbor structures over the observed (training) graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub temporal: TemporalNeighborIndex,
    pub ti: TiNeighborIndex,
    pub subject_quals: SubjectQualifierIndex,
}

impl GraphContext {
    /// Builds indexes from the augmented training split only.
    pub fn from_dataset(ds: &Dataset, cfg: &ModelConfig) -> Result<Self> {
        if !ds.is_augmented() {
            return Err(HtkgError::NotAugmented);
        }
        let n = ds.num_all_entities();
        Ok(Self {
            temporal: build_temporal_index(&ds.train, n),
            ti: build_ti_index(&ds.ti_facts, n, ds.num_ti_relations(), cfg.ti_inverse),
            subject_quals: build_subject_qualifier_index(&ds.train, n, cfg.decoder.max_subject_quals),
        })
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
    )
}

/// Glorot-uniform `rows × cols` weight.
pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

/// `n` copies of a `1 × d` parameter row.
pub(crate) fn bias_rows(g: &mut Graph, store: &ParamStore, id: ParamId, n: usize) -> Var {
    g.gather_param(store, id, &vec![0; n])
}

/// `x · wᵀ + b`.
pub(crate) fn affine(g: &mut Graph, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = g.param(store, w);
    let y = g.linear(x, wv);
    let n = g.shape(x).0;
    let bv = bias_rows(g, store, b, n);
    g.add(y, bv)
}

/// Derives an independent stream from `seed` and a key (per-entity sampling).
pub(crate) fn keyed_rng(seed: u64, key: u64) -> ChaCha8Rng {
    // splitmix64 finalizer
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Encoder plus decoder with all trainable parameters in one store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub sizes: ModelSizes,
    pub store: ParamStore,
    pub enc: EncoderParams,
    pub dec: DecoderParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, sizes: ModelSizes, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let enc = EncoderParams::new(&mut store, &config, &sizes, rng)?;
        let dec = DecoderParams::new(&mut store, &config, rng)?;
        Ok(Self {
            config,
            sizes,
            store,
            enc,
            dec,
        })
    }

    pub fn for_dataset<R: Rng + ?Sized>(config: ModelConfig, ds: &Dataset, rng: &mut R) -> Result<Self> {
        let sizes = ModelSizes::of(ds, &config)?;
        Self::new(config, sizes, rng)
    }

    /// Replaces parameter values by name; every name and shape must match.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.store.len() {
            return Err(HtkgError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                other.len(),
                self.store.len()
            )));
        }
        let ids: Vec<ParamId> = self.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let name = self.store.get(id).name.clone();
            let src = other
                .id(&name)
                .ok_or_else(|| HtkgError::Checkpoint(format!("missing parameter `{name}`")))?;
            let v = other.value(src);
            if v.shape() != self.store.value(id).shape() {
                return Err(HtkgError::Checkpoint(format!(
                    "`{name}`: shape {:?} does not match {:?}",
                    v.shape(),
                    self.store.value(id).shape()
                )));
            }
            *self.store.value_mut(id) = v.clone();
        }
        Ok(())
    }

    /// Representations of every entity (`n_all_entities × dim`).
    pub fn encode<R: RngCore>(&self, g: &mut Graph, ctx: &GraphContext, rng: &mut R) -> Var {
        self.encode_with(&self.store, g, ctx, rng)
    }

    /// As [`Self::encode`] but reading parameter values from `store`, which
    /// must share this model's layout (used by gradient checks).
    pub fn encode_with<R: RngCore>(&self, store: &ParamStore, g: &mut Graph, ctx: &GraphContext, rng: &mut R) -> Var {
        let all: Vec<usize> = (0..self.sizes.n_all_entities).collect();
        let seed = rng.next_u64();
        encoder::encode_all(g, store, &self.enc, &self.config, ctx, &all, seed, rng)
    }

    /// Scores every candidate for each query given entity representations.
    pub fn decode<R: RngCore>(
        &self,
        g: &mut Graph,
        ctx: &GraphContext,
        reps: Var,
        queries: &[LpQuery],
        rng: &mut R,
    ) -> DecodeOutput {
        self.decode_with(&self.store, g, ctx, reps, queries, rng)
    }

    pub fn decode_with<R: RngCore>(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        ctx: &GraphContext,
        reps: Var,
        queries: &[LpQuery],
        rng: &mut R,
    ) -> DecodeOutput {
        decoder::decode(
            g,
            store,
            &self.enc,
            &self.dec,
            &self.config,
            &self.sizes,
            ctx,
            reps,
            queries,
            rng,
        )
    }

    /// Mean BCE over the batch, candidates = all entities.
    pub fn loss<R: RngCore>(&self, g: &mut Graph, ctx: &GraphContext, queries: &[LpQuery], rng: &mut R) -> Var {
        self.loss_with(&self.store, g, ctx, queries, rng)
    }

    pub fn loss_with<R: RngCore>(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        ctx: &GraphContext,
        queries: &[LpQuery],
        rng: &mut R,
    ) -> Var {
        let reps = self.encode_with(store, g, ctx, rng);
        let out = self.decode_with(store, g, ctx, reps, queries, rng);
        let truth: Vec<usize> = queries.iter().map(|q| q.ground_truth.0).collect();
        g.bce_with_logits(out.scores, &truth)
    }

    /// Entity representations without gradient tracking or dropout.
    pub fn encode_eval(&self, ctx: &GraphContext, seed: u64) -> Matrix {
        let mut g = Graph::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reps = self.encode(&mut g, ctx, &mut rng);
        g.value(reps).clone()
    }

    /// Scores for `queries` against fixed representations (`B × n_entities`).
    pub fn score_eval(&self, ctx: &GraphContext, reps: &Matrix, queries: &[LpQuery]) -> Matrix {
        let mut g = Graph::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = g.constant(reps.clone());
        let out = self.decode(&mut g, ctx, r, queries, &mut rng);
        g.value(out.scores).clone()
    }

    /// Matcher weights and TI neighbors for `queries`, named through `ds`.
    pub fn attention_eval(
        &self,
        ds: &Dataset,
        ctx: &GraphContext,
        reps: &Matrix,
        queries: &[LpQuery],
    ) -> Vec<AttentionRecord> {
        let mut g = Graph::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = g.constant(reps.clone());
        let out = self.decode(&mut g, ctx, r, queries, &mut rng);
        decoder::attention_records(&g, &out, queries, ds)
    }
}
