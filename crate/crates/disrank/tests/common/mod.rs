//! Shared oracle for gradient tests: an independent f64 forward
//! implementation of every differentiable operation, plus a central
//! finite-difference harness.
//!
//! The production tape computes in f32. Finite differences taken directly on
//! an f32 forward would drown in rounding noise at small step sizes, so the
//! harness instead differentiates this f64 reference and compares the result
//! against the tape's analytic f32 gradients. That keeps the oracle
//! independent of the implementation under test while holding the comparison
//! noise floor well below the pass threshold.

#![allow(dead_code)]

pub mod gradcheck;

use disrank::numerics::{Prng, Tape, TensorId};
use disrank::textmodel::{ModelKind, ModelParams};
use std::collections::BTreeMap;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-3;
pub const VALUE_TOL: f64 = 1e-4;

pub fn ref_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

pub fn ref_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn ref_add_bias(a: &[f64], bias: &[f64], n: usize) -> Vec<f64> {
    a.chunks_exact(n)
        .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
        .collect()
}

pub fn ref_scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

pub fn ref_relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.max(0.0)).collect()
}

pub fn ref_gelu(a: &[f64]) -> Vec<f64> {
    let s = (2.0f64 / std::f64::consts::PI).sqrt();
    a.iter()
        .map(|&x| 0.5 * x * (1.0 + (s * (x + 0.044715 * x * x * x)).tanh()))
        .collect()
}

pub fn ref_softmax_rows(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for row in a.chunks_exact(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

pub fn ref_layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(n) {
        let mean: f64 = row.iter().sum::<f64>() / n as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            out.push(gain[j] * (row[j] - mean) * inv + shift[j]);
        }
    }
    out
}

pub fn ref_lookup(table: &[f64], ids: &[u16], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        out.extend_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
    }
    out
}

pub fn ref_cross_entropy(logits: &[f64], targets: &[u16], mask: &[f64], v: usize) -> f64 {
    let mut total = 0.0;
    let mut msum = 0.0;
    for (i, row) in logits.chunks_exact(v).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += mask[i] * (lse - row[targets[i] as usize]);
        msum += mask[i];
    }
    total / msum
}

pub fn ref_mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

pub fn ref_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t: usize,
    d: usize,
    n_heads: usize,
    causal: bool,
) -> Vec<f64> {
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; t * d];
    for h in 0..n_heads {
        let off = h * dh;
        for i in 0..t {
            let limit = if causal { i + 1 } else { t };
            let mut scores = vec![0.0f64; limit];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..dh {
                    acc += q[i * d + off + c] * k[j * d + off + c];
                }
                *s = scale * acc;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                let p = e / sum;
                for c in 0..dh {
                    out[i * d + off + c] += p * v[j * d + off + c];
                }
            }
        }
    }
    out
}

pub fn ref_row(x: &[f64], index: usize, n: usize) -> Vec<f64> {
    x[index * n..(index + 1) * n].to_vec()
}

/// An f64 mirror of the production transformer, built from a model's actual
/// parameters. Used to finite-difference the full training losses without
/// f32 rounding noise.
pub struct RefTransformer {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub causal: bool,
    pub params: BTreeMap<String, Vec<f64>>,
}

const REF_LN_EPS: f64 = 1e-5;

impl RefTransformer {
    pub fn from_model(model: &ModelParams) -> Self {
        let mut params = BTreeMap::new();
        for name in model.tensor_names() {
            let (_, data) = model.tensor(name).unwrap();
            params.insert(
                name.to_string(),
                data.iter().map(|&x| x as f64).collect::<Vec<f64>>(),
            );
        }
        RefTransformer {
            d: model.config.d_model,
            layers: model.config.n_layers,
            heads: model.config.n_heads,
            causal: model.config.kind == ModelKind::Decoder,
            params,
        }
    }

    fn p(&self, name: &str) -> &[f64] {
        &self.params[name]
    }

    pub fn hidden(&self, seq: &[u16]) -> Vec<f64> {
        let d = self.d;
        let t = seq.len();
        let positions: Vec<u16> = (0..t as u16).collect();
        let tok = ref_lookup(self.p("tok_emb"), seq, d);
        let pos = ref_lookup(self.p("pos_emb"), &positions, d);
        let mut x = ref_add(&tok, &pos);
        for l in 0..self.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            let h = ref_layer_norm(
                &x,
                self.p(&n("ln1.gain")),
                self.p(&n("ln1.shift")),
                REF_LN_EPS,
                d,
            );
            let q = ref_matmul(&h, self.p(&n("attn.wq")), t, d, d);
            let q = ref_add_bias(&q, self.p(&n("attn.bq")), d);
            let k = ref_matmul(&h, self.p(&n("attn.wk")), t, d, d);
            let k = ref_add_bias(&k, self.p(&n("attn.bk")), d);
            let v = ref_matmul(&h, self.p(&n("attn.wv")), t, d, d);
            let v = ref_add_bias(&v, self.p(&n("attn.bv")), d);
            let a = ref_attention(&q, &k, &v, t, d, self.heads, self.causal);
            let a = ref_matmul(&a, self.p(&n("attn.wo")), t, d, d);
            let a = ref_add_bias(&a, self.p(&n("attn.bo")), d);
            x = ref_add(&x, &a);
            let h2 = ref_layer_norm(
                &x,
                self.p(&n("ln2.gain")),
                self.p(&n("ln2.shift")),
                REF_LN_EPS,
                d,
            );
            let w1 = self.p(&n("mlp.w1"));
            let ff = w1.len() / d;
            let f = ref_matmul(&h2, w1, t, d, ff);
            let f = ref_add_bias(&f, self.p(&n("mlp.b1")), ff);
            let f = ref_gelu(&f);
            let f = ref_matmul(&f, self.p(&n("mlp.w2")), t, ff, d);
            let f = ref_add_bias(&f, self.p(&n("mlp.b2")), d);
            x = ref_add(&x, &f);
        }
        ref_layer_norm(
            &x,
            self.p("final_norm.gain"),
            self.p("final_norm.shift"),
            REF_LN_EPS,
            d,
        )
    }

    /// Masked mean next-token cross-entropy, mirroring the CPT objective.
    pub fn cpt_loss(&self, seq: &[u16], targets: &[u16], mask: &[f64]) -> f64 {
        let hidden = self.hidden(seq);
        let v = self.p("lm.b").len();
        let logits = ref_matmul(&hidden, self.p("lm.w"), seq.len(), self.d, v);
        let logits = ref_add_bias(&logits, self.p("lm.b"), v);
        ref_cross_entropy(&logits, targets, mask, v)
    }
}

/// Deterministic inputs for a gradient check, drawn away from zero so ReLU
/// and hinge kinks sit farther than the finite-difference step.
pub fn gen_input(rng: &mut Prng, len: usize, avoid_zero: bool) -> Vec<f32> {
    (0..len)
        .map(|_| {
            if avoid_zero {
                let mag = 0.2 + 1.3 * rng.uniform_f32();
                if rng.chance(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                rng.normal_f32() * 0.8
            }
        })
        .collect()
}

/// Compare the tape's analytic gradients against central finite differences
/// of an independent f64 scalar function of the same inputs.
///
/// `build` assembles the graph and returns the scalar loss; `reference`
/// computes the same scalar from f64 copies of the inputs.
pub fn check_gradients(
    name: &str,
    inputs: &[(Vec<f32>, Vec<usize>)],
    build: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
    reference: impl Fn(&[Vec<f64>]) -> f64,
) {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|(data, shape)| tape.leaf(data.clone(), shape, true).unwrap())
        .collect();
    let loss = build(&mut tape, &ids);
    let got = tape.scalar(loss).unwrap() as f64;

    let f64_inputs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(data, _)| data.iter().map(|&x| x as f64).collect())
        .collect();
    let want = reference(&f64_inputs);
    let ferr = (got - want).abs() / want.abs().max(1.0);
    assert!(
        ferr < VALUE_TOL,
        "{name}: forward mismatch, impl {got} vs reference {want}"
    );

    tape.backward(loss).unwrap();

    let mut any_nonzero = false;
    for (i, input) in f64_inputs.iter().enumerate() {
        let analytic = tape
            .grad(ids[i])
            .unwrap_or_else(|| panic!("{name}: input {i} has no gradient"));
        for e in 0..input.len() {
            let mut plus = f64_inputs.clone();
            plus[i][e] += FD_STEP;
            let mut minus = f64_inputs.clone();
            minus[i][e] -= FD_STEP;
            let numeric = (reference(&plus) - reference(&minus)) / (2.0 * FD_STEP);
            let a = analytic[e] as f64;
            any_nonzero |= a != 0.0;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            assert!(
                rel < GRAD_TOL,
                "{name}: grad mismatch at input {i} elem {e}: analytic {a} vs fd {numeric} (rel {rel:.2e})"
            );
        }
    }
    // A check where every gradient vanishes would pass vacuously.
    assert!(any_nonzero, "{name}: all gradients are exactly zero");
}
