//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Ops
//! validate shapes eagerly, compute forward values immediately, and record
//! what they need for the backward sweep. [`Tape::backward`] walks the
//! recorded nodes in reverse, accumulates gradients, and returns them keyed
//! by the ids of trainable leaves; afterwards the tape is consumed and
//! rejects further ops. Training instantiates everything at `f32`; the
//! gradient-check harness re-runs the same code at `f64`.

pub mod gradcheck;
pub mod kernels;

use std::fmt::{Debug, Display};
use std::rc::Rc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type the whole stack is generic over. `f32` for training,
/// `f64` for finite-difference verification.
pub trait Scalar: Float + Default + Debug + Display + Copy + Send + Sync + 'static {
    const NAME: &'static str;
    fn from_f64v(v: f64) -> Self;
    fn to_f64v(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    fn from_f64v(v: f64) -> Self {
        v as f32
    }
    fn to_f64v(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    fn from_f64v(v: f64) -> Self {
        v
    }
    fn to_f64v(self) -> f64 {
        self
    }
}

/// Shorthand for lossy f64 -> F constant conversion.
pub fn sc<F: Scalar>(v: f64) -> F {
    F::from_f64v(v)
}

/// Target value marking a position excluded from cross-entropy.
pub const IGNORE_INDEX: usize = usize::MAX;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u32);

impl TensorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Boolean visibility pattern for masked softmax. `true` means the position
/// participates; masked positions get exactly zero probability and zero
/// gradient. A single-row mask broadcasts over all logit rows.
#[derive(Clone)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Rc<[bool]>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::contract(format!(
                "mask bits length {} does not match {}x{}",
                bits.len(),
                rows,
                cols
            )));
        }
        Ok(Mask {
            rows,
            cols,
            bits: bits.into(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push(f(r, c));
            }
        }
        Mask {
            rows,
            cols,
            bits: bits.into(),
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Mask::from_fn(rows, cols, |_, _| true)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Visibility at (r, c), broadcasting a single-row mask.
    pub fn visible(&self, r: usize, c: usize) -> bool {
        let rr = if self.rows == 1 { 0 } else { r };
        self.bits[rr * self.cols + c]
    }

    fn row(&self, r: usize) -> &[bool] {
        let rr = if self.rows == 1 { 0 } else { r };
        &self.bits[rr * self.cols..(rr + 1) * self.cols]
    }
}

enum Op<F: Scalar> {
    Leaf {
        trainable: bool,
    },
    MatMul {
        a: TensorId,
        b: TensorId,
        trans_b: bool,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        a: TensorId,
        c: F,
    },
    Concat {
        parts: Vec<TensorId>,
        dim: usize,
    },
    Slice {
        a: TensorId,
        dim: usize,
        start: usize,
    },
    EmbedLookup {
        table: TensorId,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        stats: Vec<(F, F)>, // (mean, rstd) per row
    },
    Gelu {
        x: TensorId,
    },
    MaskedSoftmax {
        x: TensorId,
        mask: Mask,
    },
    CrossEntropy {
        logits: TensorId,
        targets: Vec<usize>,
        counted: usize,
    },
    Mean {
        x: TensorId,
    },
    SigmoidBce {
        logits: TensorId,
        labels: Vec<F>,
    },
    L2NormRows {
        x: TensorId,
        eps: F,
        norms: Vec<F>, // clamped denominators per row
    },
    MaxLastDim {
        x: TensorId,
        argmax: Vec<usize>,
    },
}

struct Node<F: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
    op: Op<F>,
}

/// Gradients produced by one backward sweep, keyed by trainable leaf id.
/// Trainable leaves the loss never reached map to all-zero buffers.
#[derive(Debug)]
pub struct Gradients<F: Scalar> {
    by_node: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: TensorId) -> Option<&[F]> {
        self.by_node
            .get(id.index())
            .and_then(|g| g.as_deref())
    }
}

/// One training step's computation graph.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.index()];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[F] {
        &self.nodes[id.index()].values
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self, id: TensorId) -> Result<F> {
        let n = &self.nodes[id.index()];
        if n.rows * n.cols != 1 {
            return Err(Error::contract(format!(
                "expected scalar, got {}x{}",
                n.rows, n.cols
            )));
        }
        Ok(n.values[0])
    }

    fn guard(&self, op: &'static str) -> Result<()> {
        if self.consumed {
            return Err(Error::contract(format!(
                "{op}: tape already consumed by backward"
            )));
        }
        Ok(())
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<F>, op: Op<F>) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            values,
            op,
        });
        TensorId((self.nodes.len() - 1) as u32)
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<F>, trainable: bool) -> Result<TensorId> {
        self.guard("leaf")?;
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                lhs: vec![rows, cols],
                rhs: vec![values.len()],
            });
        }
        Ok(self.push(rows, cols, values, Op::Leaf { trainable }))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<F>) -> Result<TensorId> {
        self.leaf(rows, cols, values, false)
    }

    /// Indicates whether a node is a trainable leaf.
    pub fn is_trainable_leaf(&self, id: TensorId) -> bool {
        matches!(self.nodes[id.index()].op, Op::Leaf { trainable: true })
    }

    // ── Ops ─────────────────────────────────────────────────────────────

    /// a(m,k) * b(k,n), or a(m,k) * b(n,k)^T when `trans_b`.
    pub fn matmul_t(&mut self, a: TensorId, b: TensorId, trans_b: bool) -> Result<TensorId> {
        self.guard("matmul")?;
        let (m, k) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![br, bc],
            });
        }
        let mut out = vec![F::zero(); m * n];
        if trans_b {
            kernels::matmul_nt(self.value(a), self.value(b), &mut out, m, k, n);
        } else {
            kernels::matmul_nn(self.value(a), self.value(b), &mut out, m, k, n);
        }
        Ok(self.push(m, n, out, Op::MatMul { a, b, trans_b }))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_t(a, b, false)
    }

    /// Elementwise sum; shapes must match exactly (no broadcasting).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.guard("add")?;
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            });
        }
        let out: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(ar, ac, out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, a: TensorId, c: F) -> Result<TensorId> {
        self.guard("scale")?;
        let (r, cl) = self.shape(a);
        let out: Vec<F> = self.value(a).iter().map(|&x| x * c).collect();
        Ok(self.push(r, cl, out, Op::Scale { a, c }))
    }

    /// Concatenate along `dim` (0 stacks rows, 1 widens columns).
    pub fn concat(&mut self, parts: &[TensorId], dim: usize) -> Result<TensorId> {
        self.guard("concat")?;
        if parts.is_empty() {
            return Err(Error::contract("concat: no inputs"));
        }
        if dim > 1 {
            return Err(Error::contract(format!("concat: dim {dim} out of range")));
        }
        let (r0, c0) = self.shape(parts[0]);
        if dim == 0 {
            let mut rows = 0;
            for &p in parts {
                let (r, c) = self.shape(p);
                if c != c0 {
                    return Err(Error::ShapeMismatch {
                        op: "concat-rows",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    });
                }
                rows += r;
            }
            let mut out = Vec::with_capacity(rows * c0);
            for &p in parts {
                out.extend_from_slice(self.value(p));
            }
            Ok(self.push(
                rows,
                c0,
                out,
                Op::Concat {
                    parts: parts.to_vec(),
                    dim,
                },
            ))
        } else {
            let mut cols = 0;
            for &p in parts {
                let (r, c) = self.shape(p);
                if r != r0 {
                    return Err(Error::ShapeMismatch {
                        op: "concat-last-dim",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    });
                }
                cols += c;
            }
            let mut out = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &p in parts {
                    let (_, c) = self.shape(p);
                    out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
                }
            }
            Ok(self.push(
                r0,
                cols,
                out,
                Op::Concat {
                    parts: parts.to_vec(),
                    dim,
                },
            ))
        }
    }

    /// Contiguous sub-block along `dim` (0 selects rows, 1 selects columns).
    pub fn slice(&mut self, a: TensorId, dim: usize, start: usize, len: usize) -> Result<TensorId> {
        self.guard("slice")?;
        let (r, c) = self.shape(a);
        if dim > 1 {
            return Err(Error::contract(format!("slice: dim {dim} out of range")));
        }
        let extent = if dim == 0 { r } else { c };
        if len == 0 || start + len > extent {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let values = if dim == 0 {
            self.value(a)[start * c..(start + len) * c].to_vec()
        } else {
            let src = self.value(a);
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&src[i * c + start..i * c + start + len]);
            }
            out
        };
        let (or, oc) = if dim == 0 { (len, c) } else { (r, len) };
        Ok(self.push(or, oc, values, Op::Slice { a, dim, start }))
    }

    /// Gather rows of `table` by id. Gradient scatters back into the table.
    pub fn embed(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        self.guard("embedding-lookup")?;
        if ids.is_empty() {
            return Err(Error::contract("embedding-lookup: empty id list"));
        }
        let (v, d) = self.shape(table);
        for &id in ids {
            if id >= v {
                return Err(Error::contract(format!(
                    "embedding-lookup: id {id} out of range for table with {v} rows"
                )));
            }
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            ids.len(),
            d,
            out,
            Op::EmbedLookup {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Row-wise layer normalization with learnable gain and bias (both 1 x d).
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> Result<TensorId> {
        self.guard("layer-norm")?;
        let (n, d) = self.shape(x);
        for (&p, name) in [(gain, "gain"), (bias, "bias")].iter().map(|(p, s)| (p, *s)) {
            let (pr, pc) = self.shape(p);
            if (pr, pc) != (1, d) {
                return Err(Error::ShapeMismatch {
                    op: if name == "gain" {
                        "layer-norm gain"
                    } else {
                        "layer-norm bias"
                    },
                    lhs: vec![n, d],
                    rhs: vec![pr, pc],
                });
            }
        }
        let eps = sc::<F>(1e-5);
        let dn = sc::<F>(d as f64);
        let mut out = vec![F::zero(); n * d];
        let mut stats = Vec::with_capacity(n);
        {
            let xv = self.value(x);
            let g = self.value(gain);
            let b = self.value(bias);
            for i in 0..n {
                let row = &xv[i * d..(i + 1) * d];
                let mut mean = F::zero();
                for &v in row {
                    mean = mean + v;
                }
                mean = mean / dn;
                let mut var = F::zero();
                for &v in row {
                    let dv = v - mean;
                    var = var + dv * dv;
                }
                var = var / dn;
                let rstd = F::one() / (var + eps).sqrt();
                stats.push((mean, rstd));
                let orow = &mut out[i * d..(i + 1) * d];
                for j in 0..d {
                    orow[j] = (row[j] - mean) * rstd * g[j] + b[j];
                }
            }
        }
        Ok(self.push(n, d, out, Op::LayerNorm { x, gain, bias, stats }))
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        self.guard("gelu")?;
        let (r, c) = self.shape(x);
        let out: Vec<F> = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        Ok(self.push(r, c, out, Op::Gelu { x }))
    }

    /// Softmax over the last dim restricted to visible positions. Masked
    /// positions get exactly zero probability and zero gradient; a row with
    /// no visible position is an error.
    pub fn masked_softmax(&mut self, x: TensorId, mask: &Mask) -> Result<TensorId> {
        self.guard("masked-softmax-last-dim")?;
        let (n, m) = self.shape(x);
        if mask.cols != m || (mask.rows != n && mask.rows != 1) {
            return Err(Error::ShapeMismatch {
                op: "masked-softmax-last-dim",
                lhs: vec![n, m],
                rhs: vec![mask.rows, mask.cols],
            });
        }
        let mut out = vec![F::zero(); n * m];
        {
            let xv = self.value(x);
            for i in 0..n {
                let mrow = mask.row(i);
                let row = &xv[i * m..(i + 1) * m];
                let mut mx = F::neg_infinity();
                for j in 0..m {
                    if mrow[j] && row[j] > mx {
                        mx = row[j];
                    }
                }
                if mx == F::neg_infinity() {
                    return Err(Error::DegenerateSoftmaxRow { row: i });
                }
                let mut z = F::zero();
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    if mrow[j] {
                        let e = (row[j] - mx).exp();
                        orow[j] = e;
                        z = z + e;
                    }
                }
                for o in orow.iter_mut() {
                    *o = *o / z;
                }
            }
        }
        Ok(self.push(
            n,
            m,
            out,
            Op::MaskedSoftmax {
                x,
                mask: mask.clone(),
            },
        ))
    }

    /// Mean cross-entropy from logits over rows whose target is not
    /// [`IGNORE_INDEX`]. Errors if every row is ignored.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        self.guard("cross-entropy-from-logits")?;
        let (n, v) = self.shape(logits);
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross-entropy-from-logits",
                lhs: vec![n, v],
                rhs: vec![targets.len()],
            });
        }
        let mut counted = 0usize;
        let mut total = F::zero();
        {
            let lv = self.value(logits);
            for (i, &t) in targets.iter().enumerate() {
                if t == IGNORE_INDEX {
                    continue;
                }
                if t >= v {
                    return Err(Error::contract(format!(
                        "cross-entropy-from-logits: target {t} out of range for {v} classes"
                    )));
                }
                let row = &lv[i * v..(i + 1) * v];
                total = total + kernels::logsumexp(row) - row[t];
                counted += 1;
            }
        }
        if counted == 0 {
            return Err(Error::contract(
                "cross-entropy-from-logits: every position is ignored",
            ));
        }
        let loss = total / sc::<F>(counted as f64);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                counted,
            },
        ))
    }

    /// Mean over all entries, producing a 1x1 tensor.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        self.guard("mean")?;
        let (r, c) = self.shape(x);
        let mut s = F::zero();
        for &v in self.value(x) {
            s = s + v;
        }
        let m = s / sc::<F>((r * c) as f64);
        Ok(self.push(1, 1, vec![m], Op::Mean { x }))
    }

    /// Mean binary cross-entropy with logits; one label per entry.
    pub fn sigmoid_bce(&mut self, logits: TensorId, labels: &[F]) -> Result<TensorId> {
        self.guard("sigmoid-bce")?;
        let (r, c) = self.shape(logits);
        if labels.len() != r * c {
            return Err(Error::ShapeMismatch {
                op: "sigmoid-bce",
                lhs: vec![r, c],
                rhs: vec![labels.len()],
            });
        }
        let mut total = F::zero();
        for (&x, &y) in self.value(logits).iter().zip(labels) {
            // softplus(x) - x*y is the stable form of -[y ln s(x) + (1-y) ln(1-s(x))]
            total = total + kernels::softplus(x) - x * y;
        }
        let loss = total / sc::<F>((r * c) as f64);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::SigmoidBce {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Rows rescaled to unit L2 norm; norms below `eps` are clamped to `eps`.
    pub fn l2_normalize_rows(&mut self, x: TensorId, eps: F) -> Result<TensorId> {
        self.guard("l2-normalize-rows")?;
        let (n, d) = self.shape(x);
        let mut out = vec![F::zero(); n * d];
        let mut norms = Vec::with_capacity(n);
        {
            let xv = self.value(x);
            for i in 0..n {
                let row = &xv[i * d..(i + 1) * d];
                let mut ss = F::zero();
                for &v in row {
                    ss = ss + v * v;
                }
                let denom = ss.sqrt().max(eps);
                norms.push(denom);
                let orow = &mut out[i * d..(i + 1) * d];
                for j in 0..d {
                    orow[j] = row[j] / denom;
                }
            }
        }
        Ok(self.push(n, d, out, Op::L2NormRows { x, eps, norms }))
    }

    /// Row-wise maximum, (n, m) -> (n, 1). Gradient routes to the first
    /// position attaining the max in each row.
    pub fn max_last_dim(&mut self, x: TensorId) -> Result<TensorId> {
        self.guard("max-last-dim")?;
        let (n, m) = self.shape(x);
        let mut out = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        {
            let xv = self.value(x);
            for i in 0..n {
                let row = &xv[i * m..(i + 1) * m];
                let mut best = row[0];
                let mut bj = 0usize;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        bj = j;
                    }
                }
                out.push(best);
                argmax.push(bj);
            }
        }
        Ok(self.push(n, 1, out, Op::MaxLastDim { x, argmax }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// trainable leaf (zero-filled when the loss does not reach it) and
    /// consumes the tape: no further ops or sweeps are accepted.
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients<F>> {
        self.guard("backward")?;
        {
            let n = &self.nodes[loss.index()];
            if n.rows * n.cols != 1 {
                return Err(Error::contract(format!(
                    "backward: loss must be scalar, got {}x{}",
                    n.rows, n.cols
                )));
            }
        }
        self.consumed = true;

        let count = self.nodes.len();
        let mut grads: Vec<Vec<F>> = self
            .nodes
            .iter()
            .map(|n| vec![F::zero(); n.rows * n.cols])
            .collect();
        let mut touched = vec![false; count];
        grads[loss.index()][0] = F::one();
        touched[loss.index()] = true;

        for idx in (0..count).rev() {
            if !touched[idx] {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.propagate(idx, &g, &mut grads, &mut touched);
            grads[idx] = g;
        }

        let by_node = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.op {
                Op::Leaf { trainable: true } => Some(std::mem::take(&mut grads[i])),
                _ => None,
            })
            .collect();
        Ok(Gradients { by_node })
    }

    fn propagate(&self, idx: usize, g: &[F], grads: &mut [Vec<F>], touched: &mut [bool]) {
        let node = &self.nodes[idx];
        let mut reach = |id: TensorId| touched[id.index()] = true;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul { a, b, trans_b } => {
                // Temporaries keep this correct when a and b are the same node.
                let (m, k) = self.shape(*a);
                let n = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = vec![F::zero(); m * k];
                let (br, bc) = self.shape(*b);
                let mut db = vec![F::zero(); br * bc];
                if *trans_b {
                    // c = a * b^T: da = g * b; db = g^T * a
                    kernels::matmul_nn(g, bv, &mut da, m, n, k);
                    kernels::matmul_tn(g, av, &mut db, m, n, k);
                } else {
                    // c = a * b: da = g * b^T; db = a^T * g
                    kernels::matmul_nt(g, bv, &mut da, m, n, k);
                    kernels::matmul_tn(av, g, &mut db, m, k, n);
                }
                for (dst, s) in grads[a.index()].iter_mut().zip(da) {
                    *dst = *dst + s;
                }
                for (dst, s) in grads[b.index()].iter_mut().zip(db) {
                    *dst = *dst + s;
                }
                reach(*a);
                reach(*b);
            }
            Op::Add { a, b } => {
                for (dst, &s) in grads[a.index()].iter_mut().zip(g) {
                    *dst = *dst + s;
                }
                for (dst, &s) in grads[b.index()].iter_mut().zip(g) {
                    *dst = *dst + s;
                }
                reach(*a);
                reach(*b);
            }
            Op::Scale { a, c } => {
                for (dst, &s) in grads[a.index()].iter_mut().zip(g) {
                    *dst = *dst + s * *c;
                }
                reach(*a);
            }
            Op::Concat { parts, dim } => {
                if *dim == 0 {
                    let c = node.cols;
                    let mut row = 0;
                    for &p in parts {
                        let (pr, _) = self.shape(p);
                        let span = &g[row * c..(row + pr) * c];
                        for (dst, &s) in grads[p.index()].iter_mut().zip(span) {
                            *dst = *dst + s;
                        }
                        row += pr;
                        reach(p);
                    }
                } else {
                    let rows = node.rows;
                    let total = node.cols;
                    let mut col = 0;
                    for &p in parts {
                        let (_, pc) = self.shape(p);
                        let gp = &mut grads[p.index()];
                        for i in 0..rows {
                            let src = &g[i * total + col..i * total + col + pc];
                            let dst = &mut gp[i * pc..(i + 1) * pc];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        col += pc;
                        reach(p);
                    }
                }
            }
            Op::Slice { a, dim, start } => {
                let (ar, ac) = self.shape(*a);
                let _ = ar;
                let ga = &mut grads[a.index()];
                if *dim == 0 {
                    let offset = start * ac;
                    for (dst, &s) in ga[offset..offset + g.len()].iter_mut().zip(g) {
                        *dst = *dst + s;
                    }
                } else {
                    let len = node.cols;
                    for i in 0..node.rows {
                        let dst = &mut ga[i * ac + start..i * ac + start + len];
                        let src = &g[i * len..(i + 1) * len];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                reach(*a);
            }
            Op::EmbedLookup { table, ids } => {
                let (_, d) = self.shape(*table);
                let gt = &mut grads[table.index()];
                for (i, &id) in ids.iter().enumerate() {
                    let src = &g[i * d..(i + 1) * d];
                    let dst = &mut gt[id * d..(id + 1) * d];
                    for (dv, &s) in dst.iter_mut().zip(src) {
                        *dv = *dv + s;
                    }
                }
                reach(*table);
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let (n, d) = self.shape(*x);
                let dn = sc::<F>(d as f64);
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let mut gx = vec![F::zero(); n * d];
                let mut ggain = vec![F::zero(); d];
                let mut gbias = vec![F::zero(); d];
                for i in 0..n {
                    let (mean, rstd) = stats[i];
                    let xrow = &xv[i * d..(i + 1) * d];
                    let grow = &g[i * d..(i + 1) * d];
                    // dy/dxhat = g * gain; then standard layer-norm backward
                    let mut sum_dxhat = F::zero();
                    let mut sum_dxhat_xhat = F::zero();
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * rstd;
                        let dxhat = grow[j] * gv[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                        ggain[j] = ggain[j] + grow[j] * xhat;
                        gbias[j] = gbias[j] + grow[j];
                    }
                    let gxrow = &mut gx[i * d..(i + 1) * d];
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * rstd;
                        let dxhat = grow[j] * gv[j];
                        gxrow[j] = gxrow[j]
                            + rstd * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
                    }
                }
                for (dst, s) in grads[x.index()].iter_mut().zip(gx) {
                    *dst = *dst + s;
                }
                for (dst, s) in grads[gain.index()].iter_mut().zip(ggain) {
                    *dst = *dst + s;
                }
                for (dst, s) in grads[bias.index()].iter_mut().zip(gbias) {
                    *dst = *dst + s;
                }
                reach(*x);
                reach(*gain);
                reach(*bias);
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                for ((dst, &s), &v) in grads[x.index()].iter_mut().zip(g).zip(xv) {
                    *dst = *dst + s * kernels::gelu_grad(v);
                }
                reach(*x);
            }
            Op::MaskedSoftmax { x, mask } => {
                let (n, m) = (node.rows, node.cols);
                let p = &node.values;
                let gx = &mut grads[x.index()];
                for i in 0..n {
                    let mrow = mask.row(i);
                    let prow = &p[i * m..(i + 1) * m];
                    let grow = &g[i * m..(i + 1) * m];
                    let mut dot = F::zero();
                    for j in 0..m {
                        if mrow[j] {
                            dot = dot + prow[j] * grow[j];
                        }
                    }
                    let gxrow = &mut gx[i * m..(i + 1) * m];
                    for j in 0..m {
                        if mrow[j] {
                            gxrow[j] = gxrow[j] + prow[j] * (grow[j] - dot);
                        }
                    }
                }
                reach(*x);
            }
            Op::CrossEntropy {
                logits,
                targets,
                counted,
            } => {
                let (n, v) = self.shape(*logits);
                let scale = g[0] / sc::<F>(*counted as f64);
                let lv = self.value(*logits);
                let gl = &mut grads[logits.index()];
                for i in 0..n {
                    let t = targets[i];
                    if t == IGNORE_INDEX {
                        continue;
                    }
                    let row = &lv[i * v..(i + 1) * v];
                    let lse = kernels::logsumexp(row);
                    let grow = &mut gl[i * v..(i + 1) * v];
                    for j in 0..v {
                        let p = (row[j] - lse).exp();
                        let delta = if j == t { F::one() } else { F::zero() };
                        grow[j] = grow[j] + scale * (p - delta);
                    }
                }
                reach(*logits);
            }
            Op::Mean { x } => {
                let (r, c) = self.shape(*x);
                let s = g[0] / sc::<F>((r * c) as f64);
                for dst in grads[x.index()].iter_mut() {
                    *dst = *dst + s;
                }
                reach(*x);
            }
            Op::SigmoidBce { logits, labels } => {
                let numel = sc::<F>(labels.len() as f64);
                let s = g[0] / numel;
                let lv = self.value(*logits);
                for ((dst, &x), &y) in grads[logits.index()].iter_mut().zip(lv).zip(labels) {
                    *dst = *dst + s * (kernels::sigmoid(x) - y);
                }
                reach(*logits);
            }
            Op::L2NormRows { x, eps, norms } => {
                let (n, d) = self.shape(*x);
                let xv = self.value(*x);
                let y = &node.values;
                let gx = &mut grads[x.index()];
                for i in 0..n {
                    let denom = norms[i];
                    let grow = &g[i * d..(i + 1) * d];
                    let gxrow = &mut gx[i * d..(i + 1) * d];
                    if denom > *eps {
                        let yrow = &y[i * d..(i + 1) * d];
                        let mut dot = F::zero();
                        for j in 0..d {
                            dot = dot + grow[j] * yrow[j];
                        }
                        for j in 0..d {
                            gxrow[j] = gxrow[j] + (grow[j] - yrow[j] * dot) / denom;
                        }
                    } else {
                        // norm clamped: y = x / eps exactly
                        let _ = xv;
                        for j in 0..d {
                            gxrow[j] = gxrow[j] + grow[j] / denom;
                        }
                    }
                }
                reach(*x);
            }
            Op::MaxLastDim { x, argmax } => {
                let (_, m) = self.shape(*x);
                let gx = &mut grads[x.index()];
                for (i, &j) in argmax.iter().enumerate() {
                    gx[i * m + j] = gx[i * m + j] + g[i];
                }
                reach(*x);
            }
        }
    }
}
