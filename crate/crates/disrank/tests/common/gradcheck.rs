//! The finite-difference check suite, callable from any test target. Each
//! function checks one operation or loss at [`POINTS`] random points and
//! panics on the first mismatch; [`ALL_CHECKS`] lists every check by name.
//!
//! Non-scalar operations reduce to a scalar through an MSE against a fixed
//! random target so every output element influences the loss with a nonzero
//! gradient.

use super::*;
use disrank::numerics::{Prng, Tape, TensorId};
use disrank::objectives::{
    cpt_loss, cpt_targets, hinge_loss, hybrid_loss, margin_mse_loss, point_mse_loss,
};
use disrank::textmodel::tokenizer::encode_pair;
use disrank::textmodel::{ModelConfig, ModelKind, ModelParams, QueryDoc};

pub const POINTS: u64 = 10;

/// Every check, named: sixteen differentiable operations (attention checked
/// per mask mode, plus a composed block) and the five training losses.
pub const ALL_CHECKS: &[(&str, fn())] = &[
    ("matmul", grad_matmul),
    ("add", grad_add),
    ("add_bias", grad_add_bias),
    ("scale", grad_scale),
    ("relu", grad_relu),
    ("gelu", grad_gelu),
    ("softmax_rows", grad_softmax_rows),
    ("layer_norm", grad_layer_norm),
    ("embedding_lookup", grad_embedding_lookup),
    ("cross_entropy", grad_cross_entropy),
    ("mse", grad_mse),
    ("attention_causal", grad_attention_causal),
    ("attention_bidirectional", grad_attention_bidirectional),
    ("row", grad_row),
    ("mean_scalars", grad_mean_scalars),
    ("composed_block", grad_composed_block),
    ("hinge_loss", grad_hinge_loss),
    ("point_mse_loss", grad_point_mse_loss),
    ("margin_mse_loss", grad_margin_mse_loss),
    ("hybrid_loss", grad_hybrid_loss),
    ("cpt_loss_full_model", grad_cpt_loss_through_full_model),
];

/// Reduce a tape tensor to a scalar against a fixed target.
fn reduce(tape: &mut Tape, out: TensorId, target: &[f32]) -> TensorId {
    let shape = tape.shape(out).to_vec();
    let t = tape.leaf(target.to_vec(), &shape, false).unwrap();
    tape.mse(out, t).unwrap()
}

fn reduce_ref(out: &[f64], target: &[f32]) -> f64 {
    let t64: Vec<f64> = target.iter().map(|&x| x as f64).collect();
    ref_mse(out, &t64)
}

fn target_for(rng: &mut Prng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.normal_f32()).collect()
}

pub fn grad_matmul() {
    for point in 0..POINTS {
        let mut rng = Prng::new(101_000 + point);
        let (m, k, n) = (3, 4, 5);
        let a = gen_input(&mut rng, m * k, false);
        let b = gen_input(&mut rng, k * n, false);
        let tgt = target_for(&mut rng, m * n);
        check_gradients(
            "matmul",
            &[(a, vec![m, k]), (b, vec![k, n])],
            |tape, ids| {
                let y = tape.matmul(ids[0], ids[1]).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_matmul(&xs[0], &xs[1], m, k, n), &tgt),
        );
    }
}

pub fn grad_add() {
    for point in 0..POINTS {
        let mut rng = Prng::new(102_000 + point);
        let a = gen_input(&mut rng, 12, false);
        let b = gen_input(&mut rng, 12, false);
        let tgt = target_for(&mut rng, 12);
        check_gradients(
            "add",
            &[(a, vec![3, 4]), (b, vec![3, 4])],
            |tape, ids| {
                let y = tape.add(ids[0], ids[1]).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_add(&xs[0], &xs[1]), &tgt),
        );
    }
}

pub fn grad_add_bias() {
    for point in 0..POINTS {
        let mut rng = Prng::new(103_000 + point);
        let a = gen_input(&mut rng, 3 * 5, false);
        let b = gen_input(&mut rng, 5, false);
        let tgt = target_for(&mut rng, 3 * 5);
        check_gradients(
            "add_bias",
            &[(a, vec![3, 5]), (b, vec![5])],
            |tape, ids| {
                let y = tape.add_bias(ids[0], ids[1]).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_add_bias(&xs[0], &xs[1], 5), &tgt),
        );
    }
}

pub fn grad_scale() {
    for point in 0..POINTS {
        let mut rng = Prng::new(104_000 + point);
        let a = gen_input(&mut rng, 9, false);
        let tgt = target_for(&mut rng, 9);
        check_gradients(
            "scale",
            &[(a, vec![3, 3])],
            |tape, ids| {
                let y = tape.scale(ids[0], -1.7).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_scale(&xs[0], -1.7), &tgt),
        );
    }
}

pub fn grad_relu() {
    for point in 0..POINTS {
        let mut rng = Prng::new(105_000 + point);
        // Inputs bounded away from the kink at zero.
        let a = gen_input(&mut rng, 16, true);
        let tgt = target_for(&mut rng, 16);
        check_gradients(
            "relu",
            &[(a, vec![4, 4])],
            |tape, ids| {
                let y = tape.relu(ids[0]).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_relu(&xs[0]), &tgt),
        );
    }
}

pub fn grad_gelu() {
    for point in 0..POINTS {
        let mut rng = Prng::new(106_000 + point);
        let a = gen_input(&mut rng, 16, false);
        let tgt = target_for(&mut rng, 16);
        check_gradients(
            "gelu",
            &[(a, vec![4, 4])],
            |tape, ids| {
                let y = tape.gelu(ids[0]).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_gelu(&xs[0]), &tgt),
        );
    }
}

pub fn grad_softmax_rows() {
    for point in 0..POINTS {
        let mut rng = Prng::new(107_000 + point);
        let a = gen_input(&mut rng, 3 * 6, false);
        let tgt = target_for(&mut rng, 3 * 6);
        check_gradients(
            "softmax_rows",
            &[(a, vec![3, 6])],
            |tape, ids| {
                let y = tape.softmax_rows(ids[0]).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_softmax_rows(&xs[0], 6), &tgt),
        );
    }
}

pub fn grad_layer_norm() {
    for point in 0..POINTS {
        let mut rng = Prng::new(108_000 + point);
        let n = 6;
        let x = gen_input(&mut rng, 4 * n, false);
        let gain = gen_input(&mut rng, n, true);
        let shift = gen_input(&mut rng, n, false);
        let tgt = target_for(&mut rng, 4 * n);
        check_gradients(
            "layer_norm",
            &[(x, vec![4, n]), (gain, vec![n]), (shift, vec![n])],
            |tape, ids| {
                let y = tape.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_layer_norm(&xs[0], &xs[1], &xs[2], 1e-5, n), &tgt),
        );
    }
}

pub fn grad_embedding_lookup() {
    for point in 0..POINTS {
        let mut rng = Prng::new(109_000 + point);
        let (v, d) = (7, 4);
        let table = gen_input(&mut rng, v * d, false);
        // Repeated id exercises gradient accumulation into one row.
        let ids: Vec<u16> = (0..4).map(|_| rng.below(v) as u16).collect();
        let tgt = target_for(&mut rng, ids.len() * d);
        let ids2 = ids.clone();
        check_gradients(
            "embedding_lookup",
            &[(table, vec![v, d])],
            |tape, tids| {
                let y = tape.embedding_lookup(tids[0], &ids).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_lookup(&xs[0], &ids2, d), &tgt),
        );
    }
}

pub fn grad_cross_entropy() {
    for point in 0..POINTS {
        let mut rng = Prng::new(110_000 + point);
        let (t, v) = (5, 9);
        let logits = gen_input(&mut rng, t * v, false);
        let targets: Vec<u16> = (0..t).map(|_| rng.below(v) as u16).collect();
        // At least one masked and one unmasked step.
        let mut mask: Vec<f32> = (0..t).map(|_| f32::from(rng.chance(0.7))).collect();
        mask[0] = 1.0;
        mask[1] = 0.0;
        let (targets2, mask2) = (targets.clone(), mask.clone());
        check_gradients(
            "cross_entropy",
            &[(logits, vec![t, v])],
            |tape, ids| tape.cross_entropy(ids[0], &targets, &mask).unwrap(),
            |xs| {
                let m64: Vec<f64> = mask2.iter().map(|&x| x as f64).collect();
                ref_cross_entropy(&xs[0], &targets2, &m64, v)
            },
        );
    }
}

pub fn grad_mse() {
    for point in 0..POINTS {
        let mut rng = Prng::new(111_000 + point);
        let a = gen_input(&mut rng, 10, false);
        let b = gen_input(&mut rng, 10, false);
        check_gradients(
            "mse",
            &[(a, vec![2, 5]), (b, vec![2, 5])],
            |tape, ids| tape.mse(ids[0], ids[1]).unwrap(),
            |xs| ref_mse(&xs[0], &xs[1]),
        );
    }
}

fn attention_case(name: &str, causal: bool, seed: u64) {
    for point in 0..POINTS {
        let mut rng = Prng::new(seed * 1000 + point);
        let (t, d, h) = (5, 8, 2);
        let q = gen_input(&mut rng, t * d, false);
        let k = gen_input(&mut rng, t * d, false);
        let v = gen_input(&mut rng, t * d, false);
        let tgt = target_for(&mut rng, t * d);
        check_gradients(
            name,
            &[(q, vec![t, d]), (k, vec![t, d]), (v, vec![t, d])],
            |tape, ids| {
                let y = tape.attention(ids[0], ids[1], ids[2], h, causal).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_attention(&xs[0], &xs[1], &xs[2], t, d, h, causal), &tgt),
        );
    }
}

pub fn grad_attention_causal() {
    attention_case("attention_causal", true, 112);
}

pub fn grad_attention_bidirectional() {
    attention_case("attention_bidirectional", false, 113);
}

pub fn grad_row() {
    for point in 0..POINTS {
        let mut rng = Prng::new(114_000 + point);
        let x = gen_input(&mut rng, 4 * 6, false);
        let tgt = target_for(&mut rng, 6);
        check_gradients(
            "row",
            &[(x, vec![4, 6])],
            |tape, ids| {
                let y = tape.row(ids[0], 2).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| reduce_ref(&ref_row(&xs[0], 2, 6), &tgt),
        );
    }
}

pub fn grad_mean_scalars() {
    for point in 0..POINTS {
        let mut rng = Prng::new(115_000 + point);
        let a = gen_input(&mut rng, 1, false);
        let b = gen_input(&mut rng, 1, false);
        let c = gen_input(&mut rng, 1, false);
        check_gradients(
            "mean_scalars",
            &[(a, vec![1]), (b, vec![1]), (c, vec![1])],
            |tape, ids| tape.mean_scalars(ids).unwrap(),
            |xs| (xs[0][0] + xs[1][0] + xs[2][0]) / 3.0,
        );
    }
}

/// Chained ops: a two-layer block shaped like the real model, checked
/// end to end through matmul, bias, gelu, layer norm, and attention.
pub fn grad_composed_block() {
    for point in 0..POINTS {
        let mut rng = Prng::new(116_000 + point);
        let (t, d) = (4, 6);
        let x = gen_input(&mut rng, t * d, false);
        let wq = gen_input(&mut rng, d * d, false);
        let wk = gen_input(&mut rng, d * d, false);
        let wv = gen_input(&mut rng, d * d, false);
        let gain = gen_input(&mut rng, d, true);
        let shift = gen_input(&mut rng, d, false);
        let tgt = target_for(&mut rng, t * d);
        check_gradients(
            "composed_block",
            &[
                (x, vec![t, d]),
                (wq, vec![d, d]),
                (wk, vec![d, d]),
                (wv, vec![d, d]),
                (gain, vec![d]),
                (shift, vec![d]),
            ],
            |tape, ids| {
                let h = tape.layer_norm(ids[0], ids[4], ids[5], 1e-5).unwrap();
                let q = tape.matmul(h, ids[1]).unwrap();
                let k = tape.matmul(h, ids[2]).unwrap();
                let v = tape.matmul(h, ids[3]).unwrap();
                let a = tape.attention(q, k, v, 2, true).unwrap();
                let g = tape.gelu(a).unwrap();
                let y = tape.add(ids[0], g).unwrap();
                reduce(tape, y, &tgt)
            },
            |xs| {
                let h = ref_layer_norm(&xs[0], &xs[4], &xs[5], 1e-5, d);
                let q = ref_matmul(&h, &xs[1], t, d, d);
                let k = ref_matmul(&h, &xs[2], t, d, d);
                let v = ref_matmul(&h, &xs[3], t, d, d);
                let a = ref_attention(&q, &k, &v, t, d, 2, true);
                let g = ref_gelu(&a);
                let y = ref_add(&xs[0], &g);
                reduce_ref(&y, &tgt)
            },
        );
    }
}

// Loss-level checks. Teacher scores enter as constants, so the
// differentiable inputs are the student (or teacher-under-training) scores.

pub fn grad_hinge_loss() {
    let margin = 0.1f32;
    for point in 0..POINTS {
        let mut rng = Prng::new(120_000 + point);
        let neg = rng.normal_f32();
        // Sample in the active region, away from the kink, so the loss is
        // differentiable at the probe point.
        let shortfall = 0.06 + 0.9 * rng.uniform_f32();
        let pos = neg + margin - shortfall;
        check_gradients(
            "hinge_loss",
            &[(vec![pos], vec![1]), (vec![neg], vec![1])],
            |tape, ids| hinge_loss(tape, ids[0], ids[1], margin).unwrap(),
            |xs| (margin as f64 - (xs[0][0] - xs[1][0])).max(0.0),
        );
    }
}

pub fn grad_point_mse_loss() {
    for point in 0..POINTS {
        let mut rng = Prng::new(121_000 + point);
        let (tp, tn) = (rng.normal_f32(), rng.normal_f32());
        let (sp, sn) = (rng.normal_f32(), rng.normal_f32());
        check_gradients(
            "point_mse_loss",
            &[(vec![sp], vec![1]), (vec![sn], vec![1])],
            |tape, ids| point_mse_loss(tape, tp, tn, ids[0], ids[1]).unwrap(),
            |xs| {
                let dp = tp as f64 - xs[0][0];
                let dn = tn as f64 - xs[1][0];
                dp * dp + dn * dn
            },
        );
    }
}

pub fn grad_margin_mse_loss() {
    for point in 0..POINTS {
        let mut rng = Prng::new(122_000 + point);
        let (tp, tn) = (rng.normal_f32(), rng.normal_f32());
        let (sp, sn) = (rng.normal_f32(), rng.normal_f32());
        check_gradients(
            "margin_mse_loss",
            &[(vec![sp], vec![1]), (vec![sn], vec![1])],
            |tape, ids| margin_mse_loss(tape, tp, tn, ids[0], ids[1]).unwrap(),
            |xs| {
                let gap = (tp - tn) as f64 - (xs[0][0] - xs[1][0]);
                gap * gap
            },
        );
    }
}

pub fn grad_hybrid_loss() {
    let weight = 0.4f32;
    for point in 0..POINTS {
        let mut rng = Prng::new(123_000 + point);
        let (tp, tn) = (rng.normal_f32(), rng.normal_f32());
        let (sp, sn) = (rng.normal_f32(), rng.normal_f32());
        check_gradients(
            "hybrid_loss",
            &[(vec![sp], vec![1]), (vec![sn], vec![1])],
            |tape, ids| hybrid_loss(tape, tp, tn, ids[0], ids[1], weight).unwrap(),
            |xs| {
                let dp = tp as f64 - xs[0][0];
                let dn = tn as f64 - xs[1][0];
                let gap = (tp - tn) as f64 - (xs[0][0] - xs[1][0]);
                dp * dp + dn * dn + weight as f64 * gap * gap
            },
        );
    }
}

/// Full-model check: the pre-training cross-entropy differentiated with
/// respect to every parameter of a small decoder, against the f64 mirror.
pub fn grad_cpt_loss_through_full_model() {
    for point in 0..POINTS {
        let mut rng = Prng::new(130_000 + point);
        let config = ModelConfig {
            kind: ModelKind::Decoder,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 16,
        };
        let model = ModelParams::init(config, &mut rng).unwrap();
        let word = |rng: &mut Prng, lo: usize, hi: usize| -> String {
            let len = rng.range_inclusive(lo, hi);
            (0..len)
                .map(|_| (b'a' + rng.below(26) as u8) as char)
                .collect()
        };
        let doc = QueryDoc {
            query: word(&mut rng, 2, 3),
            title: word(&mut rng, 2, 4),
            summary: word(&mut rng, 2, 4),
        };
        let seq = encode_pair(&doc, 16).unwrap();
        let (targets, mask) = cpt_targets(&doc, &seq);
        let mask64: Vec<f64> = mask.iter().map(|&m| m as f64).collect();

        let mut tape = Tape::new();
        let lease = model.lease(&mut tape, true).unwrap();
        let loss = cpt_loss(&model, &mut tape, &lease, &doc, 16).unwrap();
        let got = tape.scalar(loss).unwrap() as f64;
        tape.backward(loss).unwrap();

        let mut mirror = RefTransformer::from_model(&model);
        let want = mirror.cpt_loss(&seq, &targets, &mask64);
        assert!(
            (got - want).abs() / want.abs().max(1.0) < VALUE_TOL,
            "cpt forward mismatch at point {point}: impl {got} vs reference {want}"
        );

        let names: Vec<String> = model.tensor_names().map(String::from).collect();
        let mut any_nonzero = false;
        for (i, name) in names.iter().enumerate() {
            let analytic = tape
                .grad(lease.ids[i])
                .unwrap_or_else(|| panic!("no gradient for {name}"))
                .to_vec();
            for e in 0..analytic.len() {
                let orig = mirror.params[name][e];
                mirror.params.get_mut(name).unwrap()[e] = orig + FD_STEP;
                let up = mirror.cpt_loss(&seq, &targets, &mask64);
                mirror.params.get_mut(name).unwrap()[e] = orig - FD_STEP;
                let down = mirror.cpt_loss(&seq, &targets, &mask64);
                mirror.params.get_mut(name).unwrap()[e] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic[e] as f64;
                any_nonzero |= a != 0.0;
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    rel < GRAD_TOL,
                    "cpt grad mismatch at {name}[{e}]: analytic {a} vs fd {numeric} (rel {rel:.2e})"
                );
            }
        }
        assert!(any_nonzero, "cpt loss: all gradients are exactly zero");
    }
}
