//! The two ranking models: a causal decoder that scores from its last
//! position and a bidirectional encoder that scores from its first, plus the
//! shared byte template and checkpoint round trips.
//!
//! Run with: cargo run --example tiny_ranker_models

use disrank::numerics::Prng;
use disrank::textmodel::tokenizer::{decode_bytes, encode_pair, END, START};
use disrank::textmodel::{
    load_checkpoint, save_checkpoint, ModelConfig, ModelKind, ModelParams, QueryDoc,
};

fn main() {
    let doc = QueryDoc {
        query: "rust autodiff".into(),
        title: "reverse-mode autodiff in rust".into(),
        summary: "a tape based implementation of backpropagation".into(),
    };
    let seq = encode_pair(&doc, 64).unwrap();
    println!("template tokens: {} (start={} end={})", seq.len(), seq[0] == START, *seq.last().unwrap() == END);
    let text = String::from_utf8(decode_bytes(&seq[1..seq.len() - 1])).unwrap();
    println!("decoded body: {text:?}");

    let root = Prng::new(11);
    let teacher = ModelParams::init(
        ModelConfig {
            kind: ModelKind::Decoder,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 256,
        },
        &mut root.substream("teacher_init"),
    )
    .unwrap();
    let student = ModelParams::init(
        ModelConfig {
            kind: ModelKind::Encoder,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_seq_len: 256,
        },
        &mut root.substream("student_init"),
    )
    .unwrap();
    println!(
        "teacher params: {} student params: {} ratio: {:.2}",
        teacher.param_count(),
        student.param_count(),
        teacher.param_count() as f64 / student.param_count() as f64
    );
    println!("teacher score: {:+.6}", teacher.score(&seq).unwrap());
    println!("student score: {:+.6}", student.score(&seq).unwrap());

    // The decoder is causal: tokens after a position cannot change the
    // hidden state there. The encoder is bidirectional, so the same flip
    // reaches every position.
    let mut flipped = seq.clone();
    let mid = seq.len() / 2;
    flipped[seq.len() - 3] ^= 1;
    let t_mid = hidden_at(&teacher, &seq, mid);
    let t_mid_flipped = hidden_at(&teacher, &flipped, mid);
    println!("decoder mid-sequence state moved after a later-token flip: {}", t_mid != t_mid_flipped);
    let s_mid = hidden_at(&student, &seq, mid);
    let s_mid_flipped = hidden_at(&student, &flipped, mid);
    println!("encoder mid-sequence state moved after a later-token flip: {}", s_mid != s_mid_flipped);

    let dir = std::path::PathBuf::from("target/examples/tiny_ranker_models");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("teacher.bin");
    save_checkpoint(&teacher, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(
        teacher.score(&seq).unwrap().to_bits(),
        reloaded.score(&seq).unwrap().to_bits()
    );
    println!("checkpoint round trip preserves scores bit for bit");
}

// Final-layer hidden state at one position, as exact bits.
fn hidden_at(model: &ModelParams, seq: &[u16], pos: usize) -> Vec<u32> {
    let mut tape = disrank::numerics::Tape::new();
    let lease = model.lease(&mut tape, false).unwrap();
    let hidden = model.hidden_graph(&mut tape, &lease, seq).unwrap();
    let d = model.config.d_model;
    tape.data(hidden)[pos * d..(pos + 1) * d].iter().map(|v| v.to_bits()).collect()
}
