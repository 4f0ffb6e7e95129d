//! Train a tiny decoder to rank documents, then distill it into an even
//! tinier encoder.
//!
//! The pipeline mirrors how large ranking systems are actually built, shrunk
//! to desk scale so every stage runs in seconds on a laptop CPU:
//!
//! 1. generate a synthetic query/document corpus with graded relevance,
//! 2. continued pre-training of a byte-level decoder on its domain text,
//! 3. fine-tune that decoder as a pairwise ranker (the teacher),
//! 4. score unlabeled data with the teacher,
//! 5. distill the scores into a small bidirectional encoder (the student),
//! 6. evaluate both against ranking metrics and latency budgets.
//!
//! Start with the runnable walkthroughs in `examples/`; each stage of the
//! pipeline has one. The `disrank` binary chains the same stages from TOML
//! configs.

pub mod datagen;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod textmodel;
