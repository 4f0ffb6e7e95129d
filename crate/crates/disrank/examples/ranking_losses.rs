//! The training objectives: pairwise hinge for fine-tuning, next-token
//! cross-entropy for pre-training, and the three distillation losses.
//!
//! Run with: cargo run --example ranking_losses

use disrank::numerics::{Prng, Tape};
use disrank::objectives::{
    cpt_targets, hinge_loss, hybrid_loss, margin_mse_loss, mine_label_pairs, point_mse_loss,
};
use disrank::textmodel::tokenizer::encode_pair;
use disrank::textmodel::QueryDoc;

fn scalar_loss(f: impl Fn(&mut Tape) -> disrank::numerics::TensorId) -> f32 {
    let mut tape = Tape::new();
    let loss = f(&mut tape);
    tape.scalar(loss).unwrap()
}

fn main() {
    // Hinge with margin 0.1: zero once the positive leads by the margin.
    for (pos, neg) in [(0.7, 0.5), (0.5, 0.5), (0.4, 0.5)] {
        let v = scalar_loss(|tape| {
            let p = tape.leaf(vec![pos], &[1], true).unwrap();
            let n = tape.leaf(vec![neg], &[1], true).unwrap();
            hinge_loss(tape, p, n, 0.1).unwrap()
        });
        println!("hinge(pos={pos}, neg={neg}, margin=0.1) = {v:.3}");
    }

    // Distillation losses over one (d+, d-) pair. Teacher scores 0.8/0.3,
    // student currently 0.6/0.2.
    let (tp, tn, sp, sn) = (0.8f32, 0.3f32, 0.6f32, 0.2f32);
    let student = |tape: &mut Tape| {
        let p = tape.leaf(vec![sp], &[1], true).unwrap();
        let n = tape.leaf(vec![sn], &[1], true).unwrap();
        (p, n)
    };
    let point = scalar_loss(|tape| {
        let (p, n) = student(tape);
        point_mse_loss(tape, tp, tn, p, n).unwrap()
    });
    let margin = scalar_loss(|tape| {
        let (p, n) = student(tape);
        margin_mse_loss(tape, tp, tn, p, n).unwrap()
    });
    let hybrid = scalar_loss(|tape| {
        let (p, n) = student(tape);
        hybrid_loss(tape, tp, tn, p, n, 0.4).unwrap()
    });
    println!("point = {point:.3}  margin = {margin:.3}  hybrid(0.4) = {hybrid:.3}");

    // Margin MSE only sees score DIFFERENCES: shifting every student score
    // by a constant leaves it unchanged, while point MSE moves.
    let shifted_margin = scalar_loss(|tape| {
        let p = tape.leaf(vec![sp + 5.0], &[1], true).unwrap();
        let n = tape.leaf(vec![sn + 5.0], &[1], true).unwrap();
        margin_mse_loss(tape, tp, tn, p, n).unwrap()
    });
    let shifted_point = scalar_loss(|tape| {
        let p = tape.leaf(vec![sp + 5.0], &[1], true).unwrap();
        let n = tape.leaf(vec![sn + 5.0], &[1], true).unwrap();
        point_mse_loss(tape, tp, tn, p, n).unwrap()
    });
    println!("after shifting student scores by +5: margin = {shifted_margin:.3} point = {shifted_point:.3}");

    // Pre-training predicts the document given the query: positions inside
    // the query span are masked out of the loss.
    let doc = QueryDoc { query: "abc".into(), title: "tt".into(), summary: "ss".into() };
    let seq = encode_pair(&doc, 32).unwrap();
    let (targets, mask) = cpt_targets(&doc, &seq);
    println!("seq len {} mask {:?}", seq.len(), mask.iter().map(|&m| m as u8).collect::<Vec<_>>());
    println!("first unmasked target byte: {:?}", targets[mask.iter().position(|&m| m > 0.0).unwrap()] as u8 as char);

    // Pair mining: every ordered pair with a strictly higher label, capped.
    let labels = [3u8, 1, 1, 0];
    let mut rng = Prng::new(5);
    let pairs = mine_label_pairs(&labels, 10, &mut rng);
    println!(
        "mined pairs from labels {labels:?}: {:?}",
        pairs.iter().map(|p| (p.pos, p.neg)).collect::<Vec<_>>()
    );
}
