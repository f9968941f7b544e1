//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients additively, so a node
//! consumed by several operations receives the sum of all paths. Gradients of
//! parameter leaves are scattered into a [`Gradients`] buffer.
//!
//! Shapes are checked eagerly; a mismatch panics with both shapes in the message.
//! There is no implicit broadcasting beyond `1 × 1` scalars in [`Graph::scale_by`]
//! and [`Graph::blend`]; rows are replicated explicitly with [`Graph::gather_rows`].

use std::sync::Arc;

use rand::Rng;

use super::{dot, Gradients, Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row ranges `[start, start + len)` that form independent groups.
pub type Segments = Arc<Vec<(usize, usize)>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each column across rows.
    Rows,
    /// Normalize each row across columns.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    GatherParam {
        id: ParamId,
        rows: Arc<Vec<usize>>,
        n_rows: usize,
    },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Blend {
        g: Var,
        x: Var,
        y: Var,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    Softmax(Var, Axis),
    SegmentSoftmax(Var, Segments),
    SegmentSum {
        x: Var,
        seg: Arc<Vec<usize>>,
        mean: bool,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    Sin(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    RowDot(Var, Var),
    CosineSim {
        a: Var,
        b: Var,
    },
    ComplexRotate(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segs: Segments,
        heads: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        logits: Var,
        truth: Arc<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// A single computation graph. Confined to one thread; build one per step.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) {
    if a.shape() != b.shape() {
        panic!("shape mismatch in {op}: {:?} vs {:?}", a.shape(), b.shape());
    }
}

fn expect_scalar(op: &'static str, g: &Matrix, other: &Matrix) {
    if g.shape() != (1, 1) {
        panic!("shape mismatch in {op}: {:?} vs {:?}", g.shape(), other.shape());
    }
}

const LN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    // ---- leaves ----

    /// Constant input (no gradient).
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let op = if p.trainable { Op::Param(id) } else { Op::Leaf };
        self.push(p.value.clone(), op)
    }

    /// Selected rows of a parameter (embedding lookup).
    pub fn gather_param(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Var {
        let p = store.get(id);
        let value = p.value.gather_rows(rows);
        let op = if p.trainable {
            Op::GatherParam {
                id,
                rows: Arc::new(rows.to_vec()),
                n_rows: p.value.rows(),
            }
        } else {
            Op::Leaf
        };
        self.push(value, op)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).matmul(self.val(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).matmul_nt(self.val(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    /// Row-wise affine map `x · wᵀ` for a weight stored as `out × in`.
    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        self.matmul_nt(x, w)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        same_shape("add", x, y);
        let v = Matrix::from_vec(
            x.rows(),
            x.cols(),
            x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
        );
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        same_shape("sub", x, y);
        let v = Matrix::from_vec(
            x.rows(),
            x.cols(),
            x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect(),
        );
        self.push(v, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        same_shape("mul", x, y);
        let v = Matrix::from_vec(
            x.rows(),
            x.cols(),
            x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
        );
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.val(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// `s · a` with `s` a `1 × 1` node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        expect_scalar("scale_by", self.val(s), self.val(a));
        let sv = self.val(s).item();
        let v = self.val(a).map(|x| x * sv);
        self.push(v, Op::ScaleBy(a, s))
    }

    /// `g · x + (1 − g) · y` with `g` a `1 × 1` gate.
    pub fn blend(&mut self, g: Var, x: Var, y: Var) -> Var {
        expect_scalar("blend", self.val(g), self.val(x));
        same_shape("blend", self.val(x), self.val(y));
        let gv = self.val(g).item();
        let (xm, ym) = (self.val(x), self.val(y));
        // exact at g = 0 and g = 1
        let data = xm
            .data()
            .iter()
            .zip(ym.data())
            .map(|(&p, &q)| {
                if gv == 0.0 {
                    q
                } else if gv == 1.0 {
                    p
                } else {
                    gv * p + (1.0 - gv) * q
                }
            })
            .collect();
        let v = Matrix::from_vec(xm.rows(), xm.cols(), data);
        self.push(v, Op::Blend { g, x, y })
    }

    // ---- structure ----

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.val(parts[0]).rows();
        for &p in parts {
            if self.val(p).rows() != rows {
                panic!(
                    "shape mismatch in concat_cols: {:?} vs {:?}",
                    self.val(parts[0]).shape(),
                    self.val(p).shape()
                );
            }
        }
        let cols: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.val(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.val(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.val(p);
            if m.cols() != cols {
                panic!(
                    "shape mismatch in concat_rows: {:?} vs {:?}",
                    self.val(parts[0]).shape(),
                    m.shape()
                );
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows of `x` by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let v = self.val(x).gather_rows(idx);
        self.push(v, Op::GatherRows(x, Arc::new(idx.to_vec())))
    }

    // ---- reductions / normalizations ----

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let m = self.val(x);
        let mut out = m.clone();
        match axis {
            Axis::Cols => {
                for r in 0..m.rows() {
                    softmax_in_place(out.row_mut(r));
                }
            }
            Axis::Rows => {
                let (rows, cols) = m.shape();
                for c in 0..cols {
                    let mut col: Vec<f64> = (0..rows).map(|r| m.get(r, c)).collect();
                    softmax_in_place(&mut col);
                    for (r, v) in col.into_iter().enumerate() {
                        out.set(r, c, v);
                    }
                }
            }
        }
        self.push(out, Op::Softmax(x, axis))
    }

    /// Column-wise softmax inside each row segment.
    pub fn segment_softmax(&mut self, x: Var, segs: Segments) -> Var {
        let m = self.val(x);
        let cols = m.cols();
        let mut out = m.clone();
        let mut buf = Vec::new();
        for &(start, len) in segs.iter() {
            for c in 0..cols {
                buf.clear();
                buf.extend((start..start + len).map(|r| m.get(r, c)));
                softmax_in_place(&mut buf);
                for (k, &v) in buf.iter().enumerate() {
                    out.set(start + k, c, v);
                }
            }
        }
        self.push(out, Op::SegmentSoftmax(x, segs))
    }

    fn segment_reduce(&mut self, x: Var, seg: &[usize], n_seg: usize, mean: bool) -> Var {
        let m = self.val(x);
        assert_eq!(seg.len(), m.rows(), "segment ids must cover every row");
        let mut out = Matrix::zeros(n_seg, m.cols());
        let mut counts = vec![0usize; n_seg];
        for (r, &s) in seg.iter().enumerate() {
            counts[s] += 1;
            for (o, &v) in out.row_mut(s).iter_mut().zip(m.row(r)) {
                *o += v;
            }
        }
        if mean {
            for (s, &c) in counts.iter().enumerate() {
                if c > 0 {
                    let inv = 1.0 / c as f64;
                    out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
                }
            }
        }
        self.push(
            out,
            Op::SegmentSum {
                x,
                seg: Arc::new(seg.to_vec()),
                mean,
            },
        )
    }

    /// Sum of the rows assigned to each of `n_seg` segments.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], n_seg: usize) -> Var {
        self.segment_reduce(x, seg, n_seg, false)
    }

    /// Mean over a list of rows per segment; empty segments give zeros.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], n_seg: usize) -> Var {
        self.segment_reduce(x, seg, n_seg, true)
    }

    /// Mean of all rows (`1 × cols`).
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let n = self.val(x).rows();
        self.segment_mean(x, &vec![0; n], 1)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x).sum();
        self.push(Matrix::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.val(x);
        let s = m.sum() / m.len() as f64;
        self.push(Matrix::scalar(s), Op::Mean(x))
    }

    /// Row-wise layer normalization with `1 × d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let m = self.val(x);
        let (rows, d) = m.shape();
        same_shape("layer_norm", self.val(gain), self.val(bias));
        if self.val(gain).shape() != (1, d) {
            panic!(
                "shape mismatch in layer_norm: {:?} vs {:?}",
                m.shape(),
                self.val(gain).shape()
            );
        }
        let (gv, bv) = (self.val(gain).data(), self.val(bias).data());
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = Matrix::zeros(rows, d);
        for r in 0..rows {
            let row = m.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mu) * is;
                xhat[r * d + c] = h;
                out.set(r, c, h * gv[c] + bv[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    // ---- element-wise nonlinearities ----

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.val(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.val(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let v = self.val(x).map(f64::cos);
        self.push(v, Op::Cos(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let v = self.val(x).map(f64::sin);
        self.push(v, Op::Sin(x))
    }

    /// Inverted dropout with an explicit mask; identity outside training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.val(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let m = self.val(x);
        assert_eq!(mask.len(), m.len(), "dropout mask length mismatch");
        let v = Matrix::from_vec(
            m.rows(),
            m.cols(),
            m.data().iter().zip(&mask).map(|(a, b)| a * b).collect(),
        );
        self.push(v, Op::Dropout(x, mask))
    }

    /// Per-row inner product, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        same_shape("row_dot", x, y);
        let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        self.push(Matrix::from_vec(x.rows(), 1, data), Op::RowDot(a, b))
    }

    /// Per-row cosine similarity, `n × 1`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        same_shape("cosine_similarity", x, y);
        let data = (0..x.rows())
            .map(|r| {
                let (p, q) = (x.row(r), y.row(r));
                dot(p, q) / (dot(p, p).sqrt() * dot(q, q).sqrt()).max(1e-12)
            })
            .collect();
        self.push(Matrix::from_vec(x.rows(), 1, data), Op::CosineSim { a, b })
    }

    /// Row-wise rotation in the complex plane.
    ///
    /// Each row of `e` is read as `d/2` complex numbers (first half real,
    /// second half imaginary). Each row of `r` maps to
    /// `cos(r[j]) + i·sin(r[d/2 + j])`. The complex Hadamard product is mapped
    /// back to `ℝ^d` the same way. Panics on odd `d`.
    pub fn complex_rotate(&mut self, e: Var, r: Var) -> Var {
        let (em, rm) = (self.val(e), self.val(r));
        same_shape("complex_rotate", em, rm);
        let d = em.cols();
        assert!(d % 2 == 0, "complex_rotate needs an even dimension, got {d}");
        let h = d / 2;
        let mut out = Matrix::zeros(em.rows(), d);
        for row in 0..em.rows() {
            let (x, y) = (em.row(row), rm.row(row));
            let o = out.row_mut(row);
            for j in 0..h {
                let (re, im) = (x[j], x[j + h]);
                let (cr, ci) = (y[j].cos(), y[j + h].sin());
                o[j] = re * cr - im * ci;
                o[j + h] = re * ci + im * cr;
            }
        }
        self.push(out, Op::ComplexRotate(e, r))
    }

    /// Multi-head scaled dot-product self-attention restricted to segments.
    ///
    /// `q`, `k`, `v` are `T × d`; tokens attend only within their segment.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, segs: Segments, heads: usize) -> Var {
        let (qm, km, vm) = (self.val(q), self.val(k), self.val(v));
        same_shape("segment_attention", qm, km);
        same_shape("segment_attention", qm, vm);
        let d = qm.cols();
        assert!(
            heads > 0 && d % heads == 0,
            "dimension {d} not divisible by {heads} heads"
        );
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(qm.rows(), d);
        let mut probs = Vec::with_capacity(segs.iter().map(|&(_, l)| l * l * heads).sum());
        let mut scores = Vec::new();
        for &(start, len) in segs.iter() {
            for hd in 0..heads {
                let c0 = hd * dh;
                for i in 0..len {
                    let qi = &qm.row(start + i)[c0..c0 + dh];
                    scores.clear();
                    scores.extend((0..len).map(|j| dot(qi, &km.row(start + j)[c0..c0 + dh]) * scale));
                    softmax_in_place(&mut scores);
                    let orow = &mut out.row_mut(start + i)[c0..c0 + dh];
                    for (j, &p) in scores.iter().enumerate() {
                        let vj = &vm.row(start + j)[c0..c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                    probs.extend_from_slice(&scores);
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                segs,
                heads,
                probs,
            },
        )
    }

    /// Attention probabilities recorded by a [`Graph::segment_attention`] node,
    /// laid out segment-major, then head, then query row, then key column.
    pub fn attention_probs(&self, node: Var) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean logistic binary cross-entropy over a `B × N` logit matrix where
    /// row `b` has target 1 at column `truth[b]` and 0 elsewhere.
    pub fn bce_with_logits(&mut self, logits: Var, truth: &[usize]) -> Var {
        let m = self.val(logits);
        assert_eq!(m.rows(), truth.len(), "one truth column per logit row");
        let mut total = 0.0;
        for (r, &t) in truth.iter().enumerate() {
            assert!(t < m.cols(), "truth column {t} out of range {}", m.cols());
            for (c, &x) in m.row(r).iter().enumerate() {
                // -log σ(x) = softplus(-x); -log(1 - σ(x)) = softplus(x)
                total += if c == t { softplus(-x) } else { softplus(x) };
            }
        }
        let loss = total / m.len() as f64;
        self.push(
            Matrix::scalar(loss),
            Op::BceWithLogits {
                logits,
                truth: Arc::new(truth.to_vec()),
            },
        )
    }

    // ---- reverse pass ----

    /// Back-propagates from a scalar `output` and returns parameter gradients.
    pub fn backward(&self, output: Var, n_params: usize) -> Gradients {
        assert_eq!(self.val(output).shape(), (1, 1), "backward needs a scalar output");
        self.backward_with_seed(output, Matrix::scalar(1.0), n_params)
    }

    pub fn backward_with_seed(&self, output: Var, seed: Matrix, n_params: usize) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::new(n_params);
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.slot(*id, g.shape()).add_assign(&g);
                }
                Op::GatherParam { id, rows, n_rows } => {
                    let slot = out.slot(*id, (*n_rows, g.cols()));
                    for (o, &r) in rows.iter().enumerate() {
                        for (a, &b) in slot.row_mut(r).iter_mut().zip(g.row(o)) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.val(*b));
                    let db = self.val(*a).matmul_tn(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.matmul(self.val(*b));
                    let db = g.matmul_tn(self.val(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, self.val(*b), |x, y| x * y);
                    let db = zip_map(&g, self.val(*a), |x, y| x * y);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::ScaleBy(a, s) => {
                    let sv = self.val(*s).item();
                    let ds = dot(g.data(), self.val(*a).data());
                    acc(&mut grads, *s, Matrix::scalar(ds));
                    acc(&mut grads, *a, g.map(|x| x * sv));
                }
                Op::Blend { g: gate, x, y } => {
                    let gv = self.val(*gate).item();
                    let (xm, ym) = (self.val(*x), self.val(*y));
                    let dg: f64 = g
                        .data()
                        .iter()
                        .zip(xm.data().iter().zip(ym.data()))
                        .map(|(d, (p, q))| d * (p - q))
                        .sum();
                    acc(&mut grads, *gate, Matrix::scalar(dg));
                    acc(&mut grads, *x, g.map(|d| d * gv));
                    acc(&mut grads, *y, g.map(|d| d * (1.0 - gv)));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.val(p).shape();
                        let mut dp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.val(p).shape();
                        let dp = Matrix::from_vec(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec());
                        off += rows;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::GatherRows(x, idx) => {
                    let (rows, cols) = self.val(*x).shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    for (o, &r) in idx.iter().enumerate() {
                        for (a, &b) in dx.row_mut(r).iter_mut().zip(g.row(o)) {
                            *a += b;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Softmax(x, axis) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    match axis {
                        Axis::Cols => {
                            for r in 0..y.rows() {
                                softmax_backward(y.row(r), g.row(r), dx.row_mut(r));
                            }
                        }
                        Axis::Rows => {
                            let (rows, cols) = y.shape();
                            for c in 0..cols {
                                let yc: Vec<f64> = (0..rows).map(|r| y.get(r, c)).collect();
                                let gc: Vec<f64> = (0..rows).map(|r| g.get(r, c)).collect();
                                let mut dc = vec![0.0; rows];
                                softmax_backward(&yc, &gc, &mut dc);
                                for (r, v) in dc.into_iter().enumerate() {
                                    dx.set(r, c, v);
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SegmentSoftmax(x, segs) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut dx = Matrix::zeros(y.rows(), cols);
                    for &(start, len) in segs.iter() {
                        for c in 0..cols {
                            let s: f64 = (start..start + len).map(|r| y.get(r, c) * g.get(r, c)).sum();
                            for r in start..start + len {
                                dx.set(r, c, y.get(r, c) * (g.get(r, c) - s));
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SegmentSum { x, seg, mean } => {
                    let (rows, cols) = self.val(*x).shape();
                    let mut counts = vec![0usize; g.rows()];
                    if *mean {
                        for &s in seg.iter() {
                            counts[s] += 1;
                        }
                    }
                    let mut dx = Matrix::zeros(rows, cols);
                    for (r, &s) in seg.iter().enumerate() {
                        let f = if *mean { 1.0 / counts[s] as f64 } else { 1.0 };
                        for (a, &b) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                            *a = b * f;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = zip_map(&g, &node.value, |d, y| d * y * (1.0 - y));
                    acc(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = zip_map(&g, &node.value, |d, y| d * (1.0 - y * y));
                    acc(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let dx = zip_map(&g, self.val(*x), |d, a| if a > 0.0 { d } else { 0.0 });
                    acc(&mut grads, *x, dx);
                }
                Op::Cos(x) => {
                    let dx = zip_map(&g, self.val(*x), |d, a| -d * a.sin());
                    acc(&mut grads, *x, dx);
                }
                Op::Sin(x) => {
                    let dx = zip_map(&g, self.val(*x), |d, a| d * a.cos());
                    acc(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (rows, d) = g.shape();
                    let gv = self.val(*gain).data();
                    let mut dgain = Matrix::zeros(1, d);
                    let mut dbias = Matrix::zeros(1, d);
                    let mut dx = Matrix::zeros(rows, d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dgain.data_mut()[c] += gr[c] * xh[c];
                            dbias.data_mut()[c] += gr[c];
                            dxhat[c] = gr[c] * gv[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let is = inv_std[r];
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = is * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                    acc(&mut grads, *x, dx);
                }
                Op::Dropout(x, mask) => {
                    let dx = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(mask).map(|(a, b)| a * b).collect(),
                    );
                    acc(&mut grads, *x, dx);
                }
                Op::RowDot(a, b) => {
                    let (am, bm) = (self.val(*a), self.val(*b));
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    let mut db = Matrix::zeros(bm.rows(), bm.cols());
                    for r in 0..am.rows() {
                        let s = g.get(r, 0);
                        for c in 0..am.cols() {
                            da.set(r, c, s * bm.get(r, c));
                            db.set(r, c, s * am.get(r, c));
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::CosineSim { a, b } => {
                    let (am, bm) = (self.val(*a), self.val(*b));
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    let mut db = Matrix::zeros(bm.rows(), bm.cols());
                    for r in 0..am.rows() {
                        let (p, q) = (am.row(r), bm.row(r));
                        let (np, nq) = (dot(p, p).sqrt(), dot(q, q).sqrt());
                        if np * nq < 1e-12 {
                            continue;
                        }
                        let cs = node.value.get(r, 0);
                        let s = g.get(r, 0);
                        for c in 0..p.len() {
                            da.set(r, c, s * (q[c] / (np * nq) - cs * p[c] / (np * np)));
                            db.set(r, c, s * (p[c] / (np * nq) - cs * q[c] / (nq * nq)));
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::ComplexRotate(e, r) => {
                    let (em, rm) = (self.val(*e), self.val(*r));
                    let d = em.cols();
                    let h = d / 2;
                    let mut de = Matrix::zeros(em.rows(), d);
                    let mut dr = Matrix::zeros(em.rows(), d);
                    for row in 0..em.rows() {
                        let (x, y, go) = (em.row(row), rm.row(row), g.row(row));
                        for j in 0..h {
                            let (re, im) = (x[j], x[j + h]);
                            let (cr, ci) = (y[j].cos(), y[j + h].sin());
                            let (g1, g2) = (go[j], go[j + h]);
                            // o1 = re*cr - im*ci ; o2 = re*ci + im*cr
                            de.row_mut(row)[j] = g1 * cr + g2 * ci;
                            de.row_mut(row)[j + h] = -g1 * ci + g2 * cr;
                            let dcr = g1 * re + g2 * im;
                            let dci = -g1 * im + g2 * re;
                            dr.row_mut(row)[j] = dcr * -y[j].sin();
                            dr.row_mut(row)[j + h] = dci * y[j + h].cos();
                        }
                    }
                    acc(&mut grads, *e, de);
                    acc(&mut grads, *r, dr);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    segs,
                    heads,
                    probs,
                } => {
                    let (qm, km, vm) = (self.val(*q), self.val(*k), self.val(*v));
                    let (rows, d) = qm.shape();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Matrix::zeros(rows, d);
                    let mut dk = Matrix::zeros(rows, d);
                    let mut dv = Matrix::zeros(rows, d);
                    let mut off = 0;
                    let mut dp = Vec::new();
                    for &(start, len) in segs.iter() {
                        for hd in 0..*heads {
                            let c0 = hd * dh;
                            for i in 0..len {
                                let p = &probs[off..off + len];
                                off += len;
                                let gi = &g.row(start + i)[c0..c0 + dh];
                                // dV_j += p_j * dO_i ; dp_j = dO_i · V_j
                                dp.clear();
                                for (j, &pj) in p.iter().enumerate() {
                                    let vj = &vm.row(start + j)[c0..c0 + dh];
                                    dp.push(dot(gi, vj));
                                    for (a, &b) in dv.row_mut(start + j)[c0..c0 + dh].iter_mut().zip(gi) {
                                        *a += pj * b;
                                    }
                                }
                                let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                                let qi: Vec<f64> = qm.row(start + i)[c0..c0 + dh].to_vec();
                                for j in 0..len {
                                    let ds = p[j] * (dp[j] - s) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let kj = &km.row(start + j)[c0..c0 + dh];
                                    for (a, &b) in dq.row_mut(start + i)[c0..c0 + dh].iter_mut().zip(kj) {
                                        *a += ds * b;
                                    }
                                    for (a, &b) in dk.row_mut(start + j)[c0..c0 + dh].iter_mut().zip(&qi) {
                                        *a += ds * b;
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::Sum(x) => {
                    let (r, c) = self.val(*x).shape();
                    acc(&mut grads, *x, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(x) => {
                    let (r, c) = self.val(*x).shape();
                    acc(&mut grads, *x, Matrix::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::BceWithLogits { logits, truth } => {
                    let m = self.val(*logits);
                    let scale = g.item() / m.len() as f64;
                    let mut dx = Matrix::zeros(m.rows(), m.cols());
                    for (r, &t) in truth.iter().enumerate() {
                        for (c, (o, &x)) in dx.row_mut(r).iter_mut().zip(m.row(r)).enumerate() {
                            let y = if c == t { 1.0 } else { 0.0 };
                            *o = (sigmoid(x) - y) * scale;
                        }
                    }
                    acc(&mut grads, *logits, dx);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let s: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yi), &gi) in dx.iter_mut().zip(y).zip(g) {
        *o = yi * (gi - s);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
