//! The synthetic query/document generator: graded relevance from word
//! overlap, four disjoint splits, JSON Lines on disk.
//!
//! Run with: cargo run --example synthetic_corpus

use disrank::datagen::{gen_corpus, read_jsonl, write_jsonl, SynthConfig};

fn main() {
    let config = SynthConfig {
        seed: 13,
        vocab_words: 80,
        cpt_queries: 10,
        sft_queries: 40,
        kd_queries: 10,
        test_queries: 10,
        docs_per_query: 6,
        query_words: (2, 3),
        title_words: (3, 6),
        summary_words: (5, 10),
        label_noise: 0.05,
    };
    let corpus = gen_corpus(&config).unwrap();
    println!(
        "splits: cpt={} sft={} kd={} test={}",
        corpus.cpt.len(),
        corpus.sft.len(),
        corpus.kd.len(),
        corpus.test.len()
    );

    // Higher label, more query words recycled into the document.
    let q = &corpus.sft[0].query;
    println!("\nquery: {q:?}");
    let mut docs: Vec<_> = corpus.sft.iter().filter(|r| &r.query == q).collect();
    docs.sort_by_key(|r| std::cmp::Reverse(r.label));
    for r in docs {
        println!("  label={} title={:?}", r.label.unwrap(), r.title);
    }

    let counts = corpus.sft.iter().fold([0usize; 5], |mut acc, r| {
        acc[r.label.unwrap() as usize] += 1;
        acc
    });
    println!("\nsft label counts 0..=4: {counts:?}");
    println!("cpt records are unlabeled: {}", corpus.cpt.iter().all(|r| r.label.is_none()));

    let dir = std::path::PathBuf::from("target/examples/synthetic_corpus");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("sft.jsonl");
    write_jsonl(&path, &corpus.sft).unwrap();
    let back = read_jsonl(&path).unwrap();
    assert_eq!(back.records, corpus.sft);
    println!("\nwrote and re-read {} records from {}", back.records.len(), path.display());
    let first_line = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    println!("first line: {first_line}");
}
