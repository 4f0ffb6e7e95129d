//! Ranking quality metrics and measurement utilities: positive-negative
//! ratio, nDCG@k, side-by-side delta, score histograms, and a forward-pass
//! latency bench.

use crate::textmodel::{ModelError, ModelParams};
use std::time::Instant;

pub const MAX_LABEL: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least two items, got {n}")]
    TooFewItems { n: usize },
    #[error("label {label} out of range 0..={MAX_LABEL}")]
    BadLabel { label: u8 },
    #[error("k must be at least 1")]
    BadK,
    #[error("scores are empty")]
    EmptyScores,
    #[error("bin count must be at least 1")]
    BadBins,
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("good + same + bad must be positive")]
    EmptyGsb,
    #[error("iters must be at least 10, got {iters}")]
    TooFewIters { iters: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// One document's graded label and model score within a query group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredItem {
    pub label: u8,
    pub score: f64,
}

fn validate_items(items: &[ScoredItem]) -> Result<()> {
    if items.len() < 2 {
        return Err(MetricsError::TooFewItems { n: items.len() });
    }
    for (index, it) in items.iter().enumerate() {
        if it.label > MAX_LABEL {
            return Err(MetricsError::BadLabel { label: it.label });
        }
        if !it.score.is_finite() {
            return Err(MetricsError::NonFiniteScore { index });
        }
    }
    Ok(())
}

/// Positive-negative ratio of one query group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pnr {
    Finite(f64),
    /// Concordant pairs exist and no discordant ones: a perfect ordering.
    Infinite,
    /// No concordant and no discordant pairs: nothing to rank.
    Undefined,
}

/// Ratio of concordant to discordant score pairs over all ordered label
/// pairs with label(i) > label(j). Score ties count toward neither side.
pub fn pnr(items: &[ScoredItem]) -> Result<Pnr> {
    validate_items(items)?;
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    for i in 0..items.len() {
        for j in 0..items.len() {
            if items[i].label > items[j].label {
                if items[i].score > items[j].score {
                    concordant += 1;
                } else if items[i].score < items[j].score {
                    discordant += 1;
                }
            }
        }
    }
    Ok(match (concordant, discordant) {
        (0, 0) => Pnr::Undefined,
        (_, 0) => Pnr::Infinite,
        (c, d) => Pnr::Finite(c as f64 / d as f64),
    })
}

/// Corpus-level aggregation: mean over queries with a finite ratio, with
/// perfect and undefined queries counted separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnrSummary {
    pub mean_finite: Option<f64>,
    pub finite: usize,
    pub infinite: usize,
    pub undefined: usize,
}

pub fn corpus_pnr(groups: &[Vec<ScoredItem>]) -> Result<PnrSummary> {
    let mut sum = 0.0f64;
    let mut finite = 0usize;
    let mut infinite = 0usize;
    let mut undefined = 0usize;
    for g in groups {
        match pnr(g)? {
            Pnr::Finite(v) => {
                sum += v;
                finite += 1;
            }
            Pnr::Infinite => infinite += 1,
            Pnr::Undefined => undefined += 1,
        }
    }
    Ok(PnrSummary {
        mean_finite: (finite > 0).then(|| sum / finite as f64),
        finite,
        infinite,
        undefined,
    })
}

/// Normalized discounted cumulative gain at cutoff `k`.
///
/// Gain is 2^label - 1, discount 1/log2(rank + 1). Items are ranked by
/// descending score; ties keep input order. All-zero labels give 0.
pub fn ndcg_at_k(items: &[ScoredItem], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(MetricsError::BadK);
    }
    validate_items(items)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].score.partial_cmp(&items[a].score).unwrap());
    let gain = |label: u8| ((1u64 << label) - 1) as f64;
    let cutoff = k.min(items.len());
    let dcg: f64 = order[..cutoff]
        .iter()
        .enumerate()
        .map(|(rank, &i)| gain(items[i].label) / ((rank + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u8> = items.iter().map(|it| it.label).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal[..cutoff]
        .iter()
        .enumerate()
        .map(|(rank, &label)| gain(label) / ((rank + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Good/same/bad judgment counts from a side-by-side comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GsbCounts {
    pub good: u64,
    pub same: u64,
    pub bad: u64,
}

/// Side-by-side delta: (good - bad) / total judgments, in [-1, 1].
pub fn gsb_delta(counts: &GsbCounts) -> Result<f64> {
    let total = counts.good + counts.same + counts.bad;
    if total == 0 {
        return Err(MetricsError::EmptyGsb);
    }
    Ok((counts.good as f64 - counts.bad as f64) / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width histogram over [min, max]. The top bin includes the maximum;
/// identical scores collapse to a single degenerate bin.
pub fn score_histogram(scores: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    if bins < 1 {
        return Err(MetricsError::BadBins);
    }
    for (index, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore { index });
        }
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![HistogramBin {
            low: min,
            high: max,
            count: scores.len(),
        }]);
    }
    let width = (max - min) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: min + i as f64 * width,
            high: if i + 1 == bins {
                max
            } else {
                min + (i + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &s in scores {
        let idx = (((s - min) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    Ok(out)
}

/// Render a histogram as CSV with a `bin_low,bin_high,count` header.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for b in bins {
        out.push_str(&format!("{},{},{}\n", b.low, b.high, b.count));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchReport {
    pub mean_ms_per_batch: f64,
    pub param_count: usize,
}

/// Wall-clock forward latency: mean milliseconds to score `batch` sequences
/// of length `seq_len`, after warm-up, plus the exact parameter count.
pub fn latency_bench(
    model: &ModelParams,
    batch: usize,
    seq_len: usize,
    iters: usize,
) -> Result<BenchReport> {
    if iters < 10 {
        return Err(MetricsError::TooFewIters { iters });
    }
    if batch == 0 {
        return Err(MetricsError::EmptyScores);
    }
    let mut rng = crate::numerics::Prng::new(0xB3ACC);
    let seqs: Vec<Vec<u16>> = (0..batch)
        .map(|_| {
            let mut seq = Vec::with_capacity(seq_len);
            seq.push(crate::textmodel::tokenizer::START);
            for _ in 0..seq_len.saturating_sub(2) {
                seq.push(rng.below(256) as u16);
            }
            seq.push(crate::textmodel::tokenizer::END);
            seq
        })
        .collect();
    let mut sink = 0.0f64;
    for _ in 0..2 {
        for seq in &seqs {
            sink += model.score(seq)? as f64;
        }
    }
    let start = Instant::now();
    for _ in 0..iters {
        for seq in &seqs {
            sink += model.score(seq)? as f64;
        }
    }
    let elapsed = start.elapsed();
    std::hint::black_box(sink);
    Ok(BenchReport {
        mean_ms_per_batch: elapsed.as_secs_f64() * 1000.0 / iters as f64,
        param_count: model.param_count(),
    })
}
