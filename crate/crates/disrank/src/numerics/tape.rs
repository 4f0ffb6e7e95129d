//! Arena tape for reverse-mode automatic differentiation.
//!
//! A `Tape` owns every tensor created during one forward pass. Operations
//! append nodes and record enough bookkeeping to run the chain rule backwards
//! in a single reverse sweep over the arena, visiting each node exactly once.
//! Training code builds a fresh tape per batch, runs `backward`, applies the
//! optimizer to the leaf parameters, and drops the tape.

use super::{NumericsError, Result};

/// Index of a tensor on its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

enum Op {
    Leaf,
    /// out[m,n] = a[m,k] @ b[k,n]
    MatMul { a: TensorId, b: TensorId },
    /// out = a + b, same shape
    Add { a: TensorId, b: TensorId },
    /// out[m,n] = a[m,n] + bias[n] broadcast over rows
    AddBias { a: TensorId, bias: TensorId },
    /// out = c * a
    Scale { a: TensorId, c: f32 },
    Relu { a: TensorId },
    /// tanh-approximated GELU; `t` caches tanh of the inner polynomial
    Gelu { a: TensorId, t: Vec<f32> },
    /// softmax over each row of a matrix
    SoftmaxRows { a: TensorId },
    /// per-row normalization with learned gain/shift; caches mean and 1/std
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        shift: TensorId,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
    },
    /// out[t,d] = table[ids[t], :]
    Lookup { table: TensorId, ids: Vec<u16> },
    /// masked mean next-token cross-entropy over rows of logits; caches the
    /// per-row log-sum-exp and the mask normalizer
    CrossEntropy {
        logits: TensorId,
        targets: Vec<u16>,
        mask: Vec<f32>,
        lse: Vec<f64>,
        mask_sum: f64,
    },
    /// mean squared error between same-shaped tensors
    Mse { a: TensorId, b: TensorId },
    /// fused multi-head scaled dot-product attention over one sequence;
    /// `probs` caches the post-softmax weights, laid out [head][query][key]
    Attention {
        q: TensorId,
        k: TensorId,
        v: TensorId,
        n_heads: usize,
        causal: bool,
        probs: Vec<f32>,
    },
    /// out[1,n] = x[index, :]
    Row { x: TensorId, index: usize },
    /// f64-accumulated mean of scalar tensors
    MeanScalars { inputs: Vec<TensorId> },
}

struct Node {
    data: Vec<f32>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

/// Growable arena of tensors plus the recorded operations between them.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn all_finite(data: &[f32]) -> bool {
    data.iter().all(|x| x.is_finite())
}

/// dst += src
fn accumulate(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn grad_of<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f32>>],
    id: TensorId,
) -> Option<&'a mut Vec<f32>> {
    if nodes[id.0].requires_grad {
        grads[id.0].as_mut()
    } else {
        None
    }
}

/// out[m,n] += a[m,k] @ b[k,n]
fn matmul_nn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[k,n] += a[m,k]^T @ b[m,n]
fn matmul_tn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

const GELU_SCALE: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_CUBIC: f32 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_id(&self, id: TensorId, _op: &'static str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(NumericsError::BadTensorId(id.0));
        }
        Ok(())
    }

    fn push(
        &mut self,
        op_name: &'static str,
        data: Vec<f32>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op,
    ) -> Result<TensorId> {
        debug_assert_eq!(data.len(), numel(&shape));
        if !all_finite(&data) {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Ok(TensorId(self.nodes.len() - 1))
    }

    /// Register an input tensor. `requires_grad` marks it for the backward pass.
    pub fn leaf(&mut self, data: Vec<f32>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if numel(shape) != data.len() || numel(shape) == 0 {
            return Err(NumericsError::InvalidArg {
                op: "leaf",
                msg: format!("data of length {} does not fill shape {:?}", data.len(), shape),
            });
        }
        self.push("leaf", data, shape.to_vec(), requires_grad, Op::Leaf)
    }

    /// Non-differentiable scalar constant.
    pub fn constant(&mut self, value: f32) -> Result<TensorId> {
        self.push("constant", vec![value], vec![1], false, Op::Leaf)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        &self.nodes[id.0].data
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> Result<f32> {
        let node = &self.nodes[id.0];
        if numel(&node.shape) != 1 {
            return Err(NumericsError::InvalidArg {
                op: "scalar",
                msg: format!("tensor has shape {:?}", node.shape),
            });
        }
        Ok(node.data[0])
    }

    /// Gradient of `id` if the last backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.grads[id.0].as_deref()
    }

    pub(crate) fn data_mut(&mut self, id: TensorId) -> &mut [f32] {
        &mut self.nodes[id.0].data
    }

    pub(crate) fn zero_grad(&mut self, id: TensorId) {
        if let Some(g) = self.grads[id.0].as_mut() {
            g.fill(0.0);
        }
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].shape;
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(NumericsError::InvalidArg {
                op,
                msg: format!("expected a matrix, got shape {s:?}"),
            }),
        }
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_id(a, "matmul")?;
        self.check_id(b, "matmul")?;
        let (m, ka) = self.shape2(a, "matmul")?;
        let (kb, n) = self.shape2(b, "matmul")?;
        if ka != kb {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0f32; m * n];
        matmul_nn_acc(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n, &mut out);
        let req = self.requires(a) || self.requires(b);
        self.push("matmul", out, vec![m, n], req, Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_id(a, "add")?;
        self.check_id(b, "add")?;
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.requires(a) || self.requires(b);
        self.push("add", out, shape, req, Op::Add { a, b })
    }

    /// Broadcast a length-n bias over each row of an [m,n] matrix.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        self.check_id(a, "add_bias")?;
        self.check_id(bias, "add_bias")?;
        let (m, n) = self.shape2(a, "add_bias")?;
        if self.nodes[bias.0].shape != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let bdata = &self.nodes[bias.0].data;
        let mut out = Vec::with_capacity(m * n);
        for row in self.nodes[a.0].data.chunks_exact(n) {
            out.extend(row.iter().zip(bdata).map(|(x, y)| x + y));
        }
        let req = self.requires(a) || self.requires(bias);
        self.push("add_bias", out, vec![m, n], req, Op::AddBias { a, bias })
    }

    pub fn scale(&mut self, a: TensorId, c: f32) -> Result<TensorId> {
        self.check_id(a, "scale")?;
        if !c.is_finite() {
            return Err(NumericsError::InvalidArg {
                op: "scale",
                msg: format!("non-finite factor {c}"),
            });
        }
        let out: Vec<f32> = self.nodes[a.0].data.iter().map(|x| c * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.requires(a);
        self.push("scale", out, shape, req, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.check_id(a, "relu")?;
        let out: Vec<f32> = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.requires(a);
        self.push("relu", out, shape, req, Op::Relu { a })
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId> {
        self.check_id(a, "gelu")?;
        let data = &self.nodes[a.0].data;
        let mut t = Vec::with_capacity(data.len());
        let mut out = Vec::with_capacity(data.len());
        for &x in data {
            let inner = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
            let th = inner.tanh();
            t.push(th);
            out.push(0.5 * x * (1.0 + th));
        }
        let shape = self.nodes[a.0].shape.clone();
        let req = self.requires(a);
        self.push("gelu", out, shape, req, Op::Gelu { a, t })
    }

    /// Softmax over each row of a matrix.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        self.check_id(a, "softmax")?;
        let (m, n) = self.shape2(a, "softmax")?;
        let mut out = Vec::with_capacity(m * n);
        for row in self.nodes[a.0].data.chunks_exact(n) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            let start = out.len();
            for &x in row {
                let e = (x - max).exp();
                sum += e as f64;
                out.push(e);
            }
            let inv = (1.0 / sum) as f32;
            for o in &mut out[start..] {
                *o *= inv;
            }
        }
        let req = self.requires(a);
        self.push("softmax", out, vec![m, n], req, Op::SoftmaxRows { a })
    }

    /// Per-row layer normalization: gain * (x - mean) / sqrt(var + eps) + shift.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        shift: TensorId,
        eps: f32,
    ) -> Result<TensorId> {
        self.check_id(x, "layer_norm")?;
        self.check_id(gain, "layer_norm")?;
        self.check_id(shift, "layer_norm")?;
        let (m, n) = self.shape2(x, "layer_norm")?;
        for p in [gain, shift] {
            if self.nodes[p.0].shape != [n] {
                return Err(NumericsError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.nodes[x.0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
        }
        if !(eps > 0.0) {
            return Err(NumericsError::InvalidArg {
                op: "layer_norm",
                msg: format!("eps must be positive, got {eps}"),
            });
        }
        let g = &self.nodes[gain.0].data;
        let s = &self.nodes[shift.0].data;
        let mut out = Vec::with_capacity(m * n);
        let mut means = Vec::with_capacity(m);
        let mut inv_stds = Vec::with_capacity(m);
        for row in self.nodes[x.0].data.chunks_exact(n) {
            let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32;
            let var = (row
                .iter()
                .map(|&v| {
                    let d = (v - mean) as f64;
                    d * d
                })
                .sum::<f64>()
                / n as f64) as f32;
            let inv_std = 1.0 / (var + eps).sqrt();
            means.push(mean);
            inv_stds.push(inv_std);
            for j in 0..n {
                out.push(g[j] * (row[j] - mean) * inv_std + s[j]);
            }
        }
        let req = self.requires(x) || self.requires(gain) || self.requires(shift);
        self.push(
            "layer_norm",
            out,
            vec![m, n],
            req,
            Op::LayerNorm {
                x,
                gain,
                shift,
                mean: means,
                inv_std: inv_stds,
            },
        )
    }

    /// Gather rows of an embedding table: out[t, :] = table[ids[t], :].
    pub fn embedding_lookup(&mut self, table: TensorId, ids: &[u16]) -> Result<TensorId> {
        self.check_id(table, "embedding_lookup")?;
        let (v, d) = self.shape2(table, "embedding_lookup")?;
        if ids.is_empty() {
            return Err(NumericsError::InvalidArg {
                op: "embedding_lookup",
                msg: "empty id sequence".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(NumericsError::InvalidArg {
                op: "embedding_lookup",
                msg: format!("id {bad} out of range for table with {v} rows"),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let row = &self.nodes[table.0].data[id as usize * d..(id as usize + 1) * d];
            out.extend_from_slice(row);
        }
        let req = self.requires(table);
        self.push(
            "embedding_lookup",
            out,
            vec![ids.len(), d],
            req,
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean masked cross-entropy between logit rows and target ids.
    ///
    /// Row i contributes -log softmax(logits[i])[targets[i]] when mask[i] is 1
    /// and nothing when it is 0. The sum and normalizer accumulate in f64.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[u16],
        mask: &[f32],
    ) -> Result<TensorId> {
        self.check_id(logits, "cross_entropy")?;
        let (t, v) = self.shape2(logits, "cross_entropy")?;
        if targets.len() != t || mask.len() != t {
            return Err(NumericsError::InvalidArg {
                op: "cross_entropy",
                msg: format!(
                    "logits have {t} rows but targets/mask have {}/{}",
                    targets.len(),
                    mask.len()
                ),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&id| id as usize >= v) {
            return Err(NumericsError::InvalidArg {
                op: "cross_entropy",
                msg: format!("target id {bad} out of range for {v} classes"),
            });
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(NumericsError::InvalidArg {
                op: "cross_entropy",
                msg: "mask entries must be 0 or 1".into(),
            });
        }
        let mask_sum: f64 = mask.iter().map(|&m| m as f64).sum();
        if mask_sum == 0.0 {
            return Err(NumericsError::InvalidArg {
                op: "cross_entropy",
                msg: "mask selects no positions".into(),
            });
        }
        let data = &self.nodes[logits.0].data;
        let mut lse = Vec::with_capacity(t);
        let mut total = 0.0f64;
        for i in 0..t {
            let row = &data[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let sum: f64 = row.iter().map(|&x| ((x as f64) - max).exp()).sum();
            let l = max + sum.ln();
            lse.push(l);
            if mask[i] != 0.0 {
                total += l - row[targets[i] as usize] as f64;
            }
        }
        let loss = (total / mask_sum) as f32;
        let req = self.requires(logits);
        self.push(
            "cross_entropy",
            vec![loss],
            vec![1],
            req,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                lse,
                mask_sum,
            },
        )
    }

    /// Mean squared error over all elements of two same-shaped tensors.
    pub fn mse(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_id(a, "mse")?;
        self.check_id(b, "mse")?;
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(NumericsError::ShapeMismatch {
                op: "mse",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let n = self.nodes[a.0].data.len();
        let total: f64 = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum();
        let loss = (total / n as f64) as f32;
        let req = self.requires(a) || self.requires(b);
        self.push("mse", vec![loss], vec![1], req, Op::Mse { a, b })
    }

    /// Fused multi-head scaled dot-product attention over one sequence.
    ///
    /// q, k, v are [t, d] with d divisible by n_heads. With `causal` set,
    /// position i attends only to positions 0..=i.
    pub fn attention(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
        n_heads: usize,
        causal: bool,
    ) -> Result<TensorId> {
        for id in [q, k, v] {
            self.check_id(id, "attention")?;
        }
        let (t, d) = self.shape2(q, "attention")?;
        for other in [k, v] {
            if self.nodes[other.0].shape != [t, d] {
                return Err(NumericsError::ShapeMismatch {
                    op: "attention",
                    lhs: vec![t, d],
                    rhs: self.nodes[other.0].shape.clone(),
                });
            }
        }
        if n_heads == 0 || d % n_heads != 0 {
            return Err(NumericsError::InvalidArg {
                op: "attention",
                msg: format!("{n_heads} heads do not divide width {d}"),
            });
        }
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let qd = &self.nodes[q.0].data;
        let kd = &self.nodes[k.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = vec![0.0f32; t * d];
        let mut probs = vec![0.0f32; n_heads * t * t];
        let mut scores = vec![0.0f32; t];
        for h in 0..n_heads {
            let off = h * dh;
            for i in 0..t {
                let limit = if causal { i + 1 } else { t };
                let qrow = &qd[i * d + off..i * d + off + dh];
                for j in 0..limit {
                    scores[j] = scale * dot(qrow, &kd[j * d + off..j * d + off + dh]);
                }
                let max = scores[..limit].iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f64;
                for s in &mut scores[..limit] {
                    *s = (*s - max).exp();
                    sum += *s as f64;
                }
                let inv = (1.0 / sum) as f32;
                let prow = &mut probs[(h * t + i) * t..(h * t + i) * t + limit];
                for (p, &e) in prow.iter_mut().zip(&scores[..limit]) {
                    *p = e * inv;
                }
                let orow = &mut out[i * d + off..i * d + off + dh];
                for (j, &p) in prow.iter().enumerate() {
                    let vrow = &vd[j * d + off..j * d + off + dh];
                    for (o, &vv) in orow.iter_mut().zip(vrow) {
                        *o += p * vv;
                    }
                }
            }
        }
        let req = self.requires(q) || self.requires(k) || self.requires(v);
        self.push(
            "attention",
            out,
            vec![t, d],
            req,
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                causal,
                probs,
            },
        )
    }

    /// Slice one row of a matrix as a [1, n] tensor.
    pub fn row(&mut self, x: TensorId, index: usize) -> Result<TensorId> {
        self.check_id(x, "row")?;
        let (m, n) = self.shape2(x, "row")?;
        if index >= m {
            return Err(NumericsError::InvalidArg {
                op: "row",
                msg: format!("row {index} out of range for {m} rows"),
            });
        }
        let out = self.nodes[x.0].data[index * n..(index + 1) * n].to_vec();
        let req = self.requires(x);
        self.push("row", out, vec![1, n], req, Op::Row { x, index })
    }

    /// Mean of scalar tensors, accumulated in f64.
    pub fn mean_scalars(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(NumericsError::InvalidArg {
                op: "mean_scalars",
                msg: "empty input list".into(),
            });
        }
        let mut total = 0.0f64;
        let mut req = false;
        for &id in inputs {
            self.check_id(id, "mean_scalars")?;
            if numel(&self.nodes[id.0].shape) != 1 {
                return Err(NumericsError::InvalidArg {
                    op: "mean_scalars",
                    msg: format!("input has shape {:?}", self.nodes[id.0].shape),
                });
            }
            total += self.nodes[id.0].data[0] as f64;
            req |= self.requires(id);
        }
        let mean = (total / inputs.len() as f64) as f32;
        self.push(
            "mean_scalars",
            vec![mean],
            vec![1],
            req,
            Op::MeanScalars {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar loss, accumulating gradients into every
    /// tensor recorded with `requires_grad` at or before the loss.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(NumericsError::EmptyTape);
        }
        self.check_id(loss, "backward")?;
        let lnode = &self.nodes[loss.0];
        if numel(&lnode.shape) != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: lnode.shape.clone(),
            });
        }
        for idx in 0..=loss.0 {
            if self.nodes[idx].requires_grad && self.grads[idx].is_none() {
                self.grads[idx] = Some(vec![0.0f32; self.nodes[idx].data.len()]);
            }
        }
        if let Some(g) = self.grads[loss.0].as_mut() {
            g[0] += 1.0;
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f32]) {
        // Destructure so the node being read and the gradients being written
        // borrow disjoint fields. The gradient of idx itself was taken out by
        // the caller, so grads[input] never aliases it.
        let Tape { nodes, grads } = self;
        let nodes: &[Node] = nodes;
        let grads: &mut [Option<Vec<f32>>] = grads;
        let node = &nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    let bt = transpose(&nodes[b.0].data, k, n);
                    matmul_nn_acc(g, &bt, m, n, k, ga);
                }
                if let Some(gb) = grad_of(nodes, grads, *b) {
                    matmul_tn_acc(&nodes[a.0].data, g, m, k, n, gb);
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    accumulate(ga, g);
                }
                if let Some(gb) = grad_of(nodes, grads, *b) {
                    accumulate(gb, g);
                }
            }
            Op::AddBias { a, bias } => {
                let n = nodes[bias.0].shape[0];
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    accumulate(ga, g);
                }
                if let Some(gb) = grad_of(nodes, grads, *bias) {
                    for row in g.chunks_exact(n) {
                        accumulate(gb, row);
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    for (d, &s) in ga.iter_mut().zip(g) {
                        *d += c * s;
                    }
                }
            }
            Op::Relu { a } => {
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    let adata = &nodes[a.0].data;
                    for i in 0..g.len() {
                        if adata[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Gelu { a, t } => {
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    let adata = &nodes[a.0].data;
                    for i in 0..g.len() {
                        let x = adata[i];
                        let th = t[i];
                        let dinner = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x);
                        let dgelu = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
                        ga[i] += g[i] * dgelu;
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                let n = node.shape[1];
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    for ((grow, prow), garow) in g
                        .chunks_exact(n)
                        .zip(node.data.chunks_exact(n))
                        .zip(ga.chunks_exact_mut(n))
                    {
                        let dotgp: f64 = grow
                            .iter()
                            .zip(prow)
                            .map(|(&gv, &pv)| gv as f64 * pv as f64)
                            .sum();
                        let dotgp = dotgp as f32;
                        for j in 0..n {
                            garow[j] += prow[j] * (grow[j] - dotgp);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                mean,
                inv_std,
            } => {
                let n = node.shape[1];
                let xdata = &nodes[x.0].data;
                let gdata = &nodes[gain.0].data;
                for (r, grow) in g.chunks_exact(n).enumerate() {
                    let (mu, istd) = (mean[r], inv_std[r]);
                    let xrow = &xdata[r * n..(r + 1) * n];
                    if let Some(gs) = grad_of(nodes, grads, *shift) {
                        accumulate(gs, grow);
                    }
                    if let Some(gg) = grad_of(nodes, grads, *gain) {
                        for j in 0..n {
                            gg[j] += grow[j] * (xrow[j] - mu) * istd;
                        }
                    }
                    if let Some(gx) = grad_of(nodes, grads, *x) {
                        let mut sum_dxhat = 0.0f64;
                        let mut sum_dxhat_xhat = 0.0f64;
                        for j in 0..n {
                            let dxhat = (grow[j] * gdata[j]) as f64;
                            let xhat = ((xrow[j] - mu) * istd) as f64;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dxhat = (grow[j] * gdata[j]) as f64;
                            let xhat = ((xrow[j] - mu) * istd) as f64;
                            let d = (istd as f64 / nf)
                                * (nf * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                            gx[r * n + j] += d as f32;
                        }
                    }
                }
            }
            Op::Lookup { table, ids } => {
                let d = node.shape[1];
                if let Some(gt) = grad_of(nodes, grads, *table) {
                    for (t_pos, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                        accumulate(dst, &g[t_pos * d..(t_pos + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                lse,
                mask_sum,
            } => {
                let v = nodes[logits.0].shape[1];
                let ldata = &nodes[logits.0].data;
                let gscalar = g[0] as f64 / mask_sum;
                if let Some(gl) = grad_of(nodes, grads, *logits) {
                    for (i, (&tgt, &m)) in targets.iter().zip(mask.iter()).enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        let row = &ldata[i * v..(i + 1) * v];
                        let grow = &mut gl[i * v..(i + 1) * v];
                        for c in 0..v {
                            let p = ((row[c] as f64) - lse[i]).exp();
                            let ind = if c == tgt as usize { 1.0 } else { 0.0 };
                            grow[c] += (gscalar * (p - ind)) as f32;
                        }
                    }
                }
            }
            Op::Mse { a, b } => {
                let n = nodes[a.0].data.len() as f32;
                let c = 2.0 * g[0] / n;
                let adata = &nodes[a.0].data;
                let bdata = &nodes[b.0].data;
                if let Some(ga) = grad_of(nodes, grads, *a) {
                    for i in 0..ga.len() {
                        ga[i] += c * (adata[i] - bdata[i]);
                    }
                }
                if let Some(gb) = grad_of(nodes, grads, *b) {
                    for i in 0..gb.len() {
                        gb[i] -= c * (adata[i] - bdata[i]);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                causal,
                probs,
            } => {
                let (t, d) = (node.shape[0], node.shape[1]);
                let dh = d / n_heads;
                let scale = 1.0 / (dh as f32).sqrt();
                let qdata = &nodes[q.0].data;
                let kdata = &nodes[k.0].data;
                let vdata = &nodes[v.0].data;
                let mut gq = vec![0.0f32; t * d];
                let mut gk = vec![0.0f32; t * d];
                let mut gv = vec![0.0f32; t * d];
                let mut dp = vec![0.0f32; t];
                for h in 0..*n_heads {
                    let off = h * dh;
                    for i in 0..t {
                        let limit = if *causal { i + 1 } else { t };
                        let prow = &probs[(h * t + i) * t..(h * t + i) * t + limit];
                        let grow = &g[i * d + off..i * d + off + dh];
                        // dV[j] += p_ij * g_i ; dp_ij = <g_i, V[j]>
                        let mut pdot = 0.0f64;
                        for j in 0..limit {
                            let vrow = &vdata[j * d + off..j * d + off + dh];
                            dp[j] = dot(grow, vrow);
                            pdot += (prow[j] * dp[j]) as f64;
                            let gvrow = &mut gv[j * d + off..j * d + off + dh];
                            for (o, &gg) in gvrow.iter_mut().zip(grow) {
                                *o += prow[j] * gg;
                            }
                        }
                        // ds = p * (dp - <dp, p>), then chain into q and k
                        let pdot = pdot as f32;
                        let qrow = &qdata[i * d + off..i * d + off + dh];
                        let gqrow_base = i * d + off;
                        for j in 0..limit {
                            let ds = scale * prow[j] * (dp[j] - pdot);
                            let krow = &kdata[j * d + off..j * d + off + dh];
                            let gqrow = &mut gq[gqrow_base..gqrow_base + dh];
                            for (o, &kk) in gqrow.iter_mut().zip(krow) {
                                *o += ds * kk;
                            }
                            let gkrow = &mut gk[j * d + off..j * d + off + dh];
                            for (o, &qq) in gkrow.iter_mut().zip(qrow) {
                                *o += ds * qq;
                            }
                        }
                    }
                }
                if let Some(gqd) = grad_of(nodes, grads, *q) {
                    accumulate(gqd, &gq);
                }
                if let Some(gkd) = grad_of(nodes, grads, *k) {
                    accumulate(gkd, &gk);
                }
                if let Some(gvd) = grad_of(nodes, grads, *v) {
                    accumulate(gvd, &gv);
                }
            }
            Op::Row { x, index } => {
                let n = node.shape[1];
                if let Some(gx) = grad_of(nodes, grads, *x) {
                    accumulate(&mut gx[index * n..(index + 1) * n], g);
                }
            }
            Op::MeanScalars { inputs } => {
                let share = g[0] / inputs.len() as f32;
                for id in inputs {
                    if let Some(gi) = grad_of(nodes, grads, *id) {
                        gi[0] += share;
                    }
                }
            }
        }
    }
}
