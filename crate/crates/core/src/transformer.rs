//! Pre-norm Transformer encoder over packed variable-length sequences.
//!
//! Sequences are stacked row-wise and described by [`Segments`]; tokens only
//! attend within their own sequence. There are no positional encodings, so a
//! permutation of tokens inside a sequence permutes the outputs the same way.

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::model::{affine, uniform};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, Segments, Var};

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct TransformerParams {
    /// Learned `[CLS]` token, `1 × d`.
    pub cls: ParamId,
    pub blocks: Vec<BlockParams>,
    pub out_gain: ParamId,
    pub out_bias: ParamId,
    pub heads: usize,
}

pub struct TransformerOutput {
    pub hidden: Var,
    /// One attention node per block, for [`Graph::attention_probs`].
    pub attention: Vec<Var>,
}

impl TransformerParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        layers: usize,
        heads: usize,
        ffn_mult: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let b = 1.0 / (d as f64).sqrt();
        let f = ffn_mult * d;
        let cls = store.add(format!("{prefix}.cls"), uniform(rng, 1, d, b))?;
        let mut blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            let p = format!("{prefix}.b{l}");
            blocks.push(BlockParams {
                ln1_gain: store.add(format!("{p}.ln1.gain"), Matrix::filled(1, d, 1.0))?,
                ln1_bias: store.add(format!("{p}.ln1.bias"), Matrix::zeros(1, d))?,
                wq: store.add(format!("{p}.wq"), uniform(rng, d, d, b))?,
                wk: store.add(format!("{p}.wk"), uniform(rng, d, d, b))?,
                wv: store.add(format!("{p}.wv"), uniform(rng, d, d, b))?,
                wo: store.add(format!("{p}.wo"), uniform(rng, d, d, b))?,
                ln2_gain: store.add(format!("{p}.ln2.gain"), Matrix::filled(1, d, 1.0))?,
                ln2_bias: store.add(format!("{p}.ln2.bias"), Matrix::zeros(1, d))?,
                ff1_w: store.add(format!("{p}.ff1.w"), uniform(rng, f, d, b))?,
                ff1_b: store.add(format!("{p}.ff1.b"), Matrix::zeros(1, f))?,
                ff2_w: store.add(format!("{p}.ff2.w"), uniform(rng, d, f, 1.0 / (f as f64).sqrt()))?,
                ff2_b: store.add(format!("{p}.ff2.b"), Matrix::zeros(1, d))?,
            });
        }
        Ok(Self {
            cls,
            blocks,
            out_gain: store.add(format!("{prefix}.out.gain"), Matrix::filled(1, d, 1.0))?,
            out_bias: store.add(format!("{prefix}.out.bias"), Matrix::zeros(1, d))?,
            heads,
        })
    }

    /// `n` copies of the `[CLS]` token.
    pub fn cls_rows(&self, g: &mut Graph, store: &ParamStore, n: usize) -> Var {
        g.gather_param(store, self.cls, &vec![0; n])
    }

    pub fn forward<R: RngCore>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        segs: Segments,
        dropout: f64,
        rng: &mut R,
    ) -> TransformerOutput {
        let mut h = x;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (g1, b1) = (g.param(store, b.ln1_gain), g.param(store, b.ln1_bias));
            let n = g.layer_norm(h, g1, b1);
            let (wq, wk, wv, wo) = (
                g.param(store, b.wq),
                g.param(store, b.wk),
                g.param(store, b.wv),
                g.param(store, b.wo),
            );
            let q = g.linear(n, wq);
            let k = g.linear(n, wk);
            let v = g.linear(n, wv);
            let a = g.segment_attention(q, k, v, segs.clone(), self.heads);
            attention.push(a);
            let a = g.linear(a, wo);
            let a = g.dropout(a, dropout, rng);
            h = g.add(h, a);

            let (g2, b2) = (g.param(store, b.ln2_gain), g.param(store, b.ln2_bias));
            let n = g.layer_norm(h, g2, b2);
            let f = affine(g, store, n, b.ff1_w, b.ff1_b);
            let f = g.tanh(f);
            let f = affine(g, store, f, b.ff2_w, b.ff2_b);
            let f = g.dropout(f, dropout, rng);
            h = g.add(h, f);
        }
        let (go, bo) = (g.param(store, self.out_gain), g.param(store, self.out_bias));
        let hidden = g.layer_norm(h, go, bo);
        TransformerOutput { hidden, attention }
    }
}
