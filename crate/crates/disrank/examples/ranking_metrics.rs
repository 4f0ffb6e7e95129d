//! The evaluation metrics: PNR, nDCG@k, side-by-side delta, score
//! histograms.
//!
//! Run with: cargo run --example ranking_metrics

use disrank::metrics::{
    corpus_pnr, gsb_delta, histogram_csv, ndcg_at_k, pnr, score_histogram, GsbCounts, Pnr,
    ScoredItem,
};

fn group(labels: &[u8], scores: &[f64]) -> Vec<ScoredItem> {
    labels.iter().zip(scores).map(|(&label, &score)| ScoredItem { label, score }).collect()
}

fn main() {
    // PNR: concordant label-ordered pairs over discordant ones.
    let reversed = group(&[2, 1, 0], &[0.1, 0.5, 0.9]);
    let decent = group(&[4, 2, 1, 0], &[0.9, 0.7, 0.8, 0.1]);
    let perfect = group(&[3, 2, 0], &[0.9, 0.5, 0.1]);
    for (name, g) in [("reversed", &reversed), ("decent", &decent), ("perfect", &perfect)] {
        match pnr(g).unwrap() {
            Pnr::Finite(v) => println!("pnr({name}) = {v}"),
            Pnr::Infinite => println!("pnr({name}) = +inf (no discordant pairs)"),
            Pnr::Undefined => println!("pnr({name}) undefined (no ordered label pairs)"),
        }
    }
    let summary = corpus_pnr(&[reversed, decent, perfect]).unwrap();
    println!(
        "corpus: mean finite {:?} over {} finite / {} infinite / {} undefined groups",
        summary.mean_finite, summary.finite, summary.infinite, summary.undefined
    );

    // nDCG@k with graded labels; 1.0 means the ideal order.
    let g = group(&[3, 2, 0], &[0.2, 0.9, 0.5]);
    println!("ndcg@3 = {:.4}", ndcg_at_k(&g, 3).unwrap());
    let ideal = group(&[3, 2, 0], &[0.9, 0.5, 0.1]);
    println!("ndcg@3 ideal order = {:.4}", ndcg_at_k(&ideal, 3).unwrap());

    // Side-by-side judgment counts: (good, same, bad) -> net preference.
    let counts = GsbCounts { good: 54, same: 116, bad: 30 };
    println!("gsb delta = {:+.1}%", 100.0 * gsb_delta(&counts).unwrap());

    // Score histograms for drift checks, as CSV.
    let scores: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
    let bins = score_histogram(&scores, 8).unwrap();
    print!("{}", histogram_csv(&bins));
}
