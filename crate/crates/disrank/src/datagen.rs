//! Synthetic query/document corpus with a controllable relevance signal.
//!
//! Every document is generated against a query with a true grade y in 0..=4.
//! The title contains round(y/4 * |query words|) of the query's words and the
//! summary devotes round(y/4 * |summary words|) of its positions to query
//! words, so lexical overlap rises monotonically with the grade. Emitted
//! labels are flipped to a uniformly random other grade with probability
//! `label_noise`.

use crate::numerics::Prng;
use crate::textmodel::QueryDoc;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: label {label} out of range 0..=4")]
    BadLabel { line: usize, label: i64 },
    #[error("invalid generator config: {0}")]
    BadConfig(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Generator settings. Word-count fields are inclusive uniform ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab_words: usize,
    pub cpt_queries: usize,
    pub sft_queries: usize,
    pub kd_queries: usize,
    pub test_queries: usize,
    pub docs_per_query: usize,
    pub query_words: (usize, usize),
    pub title_words: (usize, usize),
    pub summary_words: (usize, usize),
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_words: 200,
            cpt_queries: 300,
            sft_queries: 500,
            kd_queries: 500,
            test_queries: 200,
            docs_per_query: 8,
            query_words: (2, 5),
            title_words: (3, 8),
            summary_words: (5, 20),
            label_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_words < 20 {
            return Err(DataError::BadConfig(format!(
                "vocab_words must be at least 20, got {}",
                self.vocab_words
            )));
        }
        if self.docs_per_query < 2 {
            return Err(DataError::BadConfig(format!(
                "docs_per_query must be at least 2, got {}",
                self.docs_per_query
            )));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(DataError::BadConfig(format!(
                "label_noise must be in [0, 0.5), got {}",
                self.label_noise
            )));
        }
        for (name, (lo, hi)) in [
            ("query_words", self.query_words),
            ("title_words", self.title_words),
            ("summary_words", self.summary_words),
        ] {
            if lo < 1 || hi < lo {
                return Err(DataError::BadConfig(format!(
                    "{name} range ({lo}, {hi}) is not a valid inclusive range"
                )));
            }
        }
        Ok(())
    }
}

/// One JSONL line: a query/document pair with optional grade and score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub query: String,
    pub title: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
}

impl Record {
    pub fn doc(&self) -> QueryDoc {
        QueryDoc {
            query: self.query.clone(),
            title: self.title.clone(),
            summary: self.summary.clone(),
        }
    }
}

/// The four generated splits. Queries never repeat across splits.
pub struct Corpus {
    pub cpt: Vec<Record>,
    pub sft: Vec<Record>,
    pub kd: Vec<Record>,
    pub test: Vec<Record>,
}

fn gen_word(rng: &mut Prng) -> String {
    let len = rng.range_inclusive(3, 6);
    (0..len).map(|_| (b'a' + rng.below(26) as u8) as char).collect()
}

struct DocDraw {
    title: String,
    summary: String,
    true_label: u8,
    emitted_label: u8,
}

fn draw_doc(
    config: &SynthConfig,
    vocab: &[String],
    query_idx: &[usize],
    rng: &mut Prng,
) -> DocDraw {
    let query_set: HashSet<usize> = query_idx.iter().copied().collect();
    let filler = |rng: &mut Prng| loop {
        let w = rng.below(vocab.len());
        if !query_set.contains(&w) {
            return vocab[w].clone();
        }
    };
    let qw = query_idx.len();
    let y = rng.below(5) as u8;
    let share = |total: usize| ((y as f64 / 4.0) * total as f64).round() as usize;

    // Title: a y-proportional subset of the query words, distinct, padded
    // with fillers. Length stretches if the subset alone would overflow it.
    let overlap = share(qw);
    let title_len = rng
        .range_inclusive(config.title_words.0, config.title_words.1)
        .max(overlap);
    let mut title: Vec<String> = rng
        .sample_distinct(qw, overlap)
        .into_iter()
        .map(|i| vocab[query_idx[i]].clone())
        .collect();
    while title.len() < title_len {
        title.push(filler(rng));
    }
    rng.shuffle(&mut title);

    // Summary: a y-proportional share of positions holds query words, drawn
    // with replacement; the rest are fillers.
    let summary_len = rng.range_inclusive(config.summary_words.0, config.summary_words.1);
    let hits = share(summary_len);
    let mut summary: Vec<String> = (0..summary_len)
        .map(|i| {
            if i < hits {
                vocab[query_idx[rng.below(qw)]].clone()
            } else {
                filler(rng)
            }
        })
        .collect();
    rng.shuffle(&mut summary);

    // Label noise: both draws happen unconditionally so the stream position
    // does not depend on the noise rate.
    let flip = rng.chance(config.label_noise);
    let alt = rng.below(4) as u8;
    let emitted = if flip {
        if alt >= y {
            alt + 1
        } else {
            alt
        }
    } else {
        y
    };
    DocDraw {
        title: title.join(" "),
        summary: summary.join(" "),
        true_label: y,
        emitted_label: emitted,
    }
}

/// Generate all four splits deterministically from the config seed.
pub fn gen_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let root = Prng::new(config.seed);

    let mut vocab_rng = root.substream("vocab");
    let mut vocab: Vec<String> = Vec::with_capacity(config.vocab_words);
    let mut seen = HashSet::new();
    while vocab.len() < config.vocab_words {
        let w = gen_word(&mut vocab_rng);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }

    let total_queries =
        config.cpt_queries + config.sft_queries + config.kd_queries + config.test_queries;
    let mut query_rng = root.substream("queries");
    let mut queries: Vec<Vec<usize>> = Vec::with_capacity(total_queries);
    let mut query_strings = HashSet::new();
    while queries.len() < total_queries {
        let qw = query_rng.range_inclusive(config.query_words.0, config.query_words.1);
        let idx = query_rng.sample_distinct(config.vocab_words, qw);
        let text = idx
            .iter()
            .map(|&i| vocab[i].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if query_strings.insert(text) {
            queries.push(idx);
        }
    }

    let mut doc_rng = root.substream("docs");
    let mut corpus = Corpus {
        cpt: Vec::new(),
        sft: Vec::new(),
        kd: Vec::new(),
        test: Vec::new(),
    };
    for (qi, query_idx) in queries.iter().enumerate() {
        let query = query_idx
            .iter()
            .map(|&i| vocab[i].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        for _ in 0..config.docs_per_query {
            let d = draw_doc(config, &vocab, query_idx, &mut doc_rng);
            let record = |label: Option<u8>| Record {
                query: query.clone(),
                title: d.title.clone(),
                summary: d.summary.clone(),
                label,
                score: None,
            };
            if qi < config.cpt_queries {
                // Pre-training text: highly relevant pairs only, unlabeled.
                if d.true_label >= 3 {
                    corpus.cpt.push(record(None));
                }
            } else if qi < config.cpt_queries + config.sft_queries {
                corpus.sft.push(record(Some(d.emitted_label)));
            } else if qi < config.cpt_queries + config.sft_queries + config.kd_queries {
                corpus.kd.push(record(None));
            } else {
                corpus.test.push(record(Some(d.emitted_label)));
            }
        }
    }
    Ok(corpus)
}

/// Serialize records as JSON Lines, one object per line, fields in a fixed
/// order, trailing newline on every line.
pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| DataError::Malformed { line: 0, msg: e.to_string() })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct ReadOutcome {
    pub records: Vec<Record>,
    /// Count of unknown fields that were ignored across all lines.
    pub unknown_field_warnings: usize,
}

const KNOWN_FIELDS: [&str; 5] = ["query", "title", "summary", "label", "score"];

/// Parse a JSONL file. Errors carry 1-based line numbers; unknown fields are
/// ignored but counted; a final line without a newline is an error.
pub fn read_jsonl(path: &Path) -> Result<ReadOutcome> {
    let raw = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut warnings = 0usize;
    if raw.is_empty() {
        return Ok(ReadOutcome { records, unknown_field_warnings: warnings });
    }
    let complete = raw.ends_with('\n');
    let lines: Vec<&str> = raw.split_terminator('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let line_no = i + 1;
        if !complete && i + 1 == lines.len() {
            return Err(DataError::Malformed {
                line: line_no,
                msg: "truncated final line (missing newline)".into(),
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| DataError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| DataError::Malformed {
            line: line_no,
            msg: "not a JSON object".into(),
        })?;
        warnings += obj
            .keys()
            .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
            .count();
        if let Some(label) = obj.get("label") {
            let n = label.as_i64().ok_or_else(|| DataError::Malformed {
                line: line_no,
                msg: "label is not an integer".into(),
            })?;
            if !(0..=4).contains(&n) {
                return Err(DataError::BadLabel { line: line_no, label: n });
            }
        }
        let record: Record =
            serde_json::from_value(value).map_err(|e| DataError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(ReadOutcome { records, unknown_field_warnings: warnings })
}
