//! The eight commands behind the CLI. Each validates config and inputs
//! before writing anything, then streams progress lines to stdout.

use super::config::{echo_effective, EvalTarget, RunConfig};
use super::train::{
    format_pnr, prep_groups, train_cpt, train_distill, train_sft, PreppedGroup,
};
use super::PipelineError;
use crate::datagen::{gen_corpus, read_jsonl, write_jsonl, Record};
use crate::metrics::{
    corpus_pnr, histogram_csv, latency_bench, ndcg_at_k, score_histogram, BenchReport, PnrSummary,
    ScoredItem,
};
use crate::numerics::Prng;
use crate::textmodel::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use std::path::{Path, PathBuf};

fn io_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(e.to_string())
}

fn require_file(path: &Path, what: &str, hint: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::Io(format!(
            "missing {what} at {} ({hint})",
            path.display()
        )))
    }
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Io(format!("create {}: {e}", dir.display())))?;
    }
    Ok(())
}

/// Load a checkpoint and insist it matches the configured architecture, so a
/// stale file from another run cannot silently change the experiment.
fn load_model_checked(
    path: &Path,
    expect: &ModelConfig,
    what: &str,
    hint: &str,
) -> Result<ModelParams, PipelineError> {
    require_file(path, what, hint)?;
    let model = load_checkpoint(path)?;
    if model.config != *expect {
        return Err(PipelineError::Config(format!(
            "{what} at {} was built as {:?} but the config asks for {:?}",
            path.display(),
            model.config,
            expect
        )));
    }
    Ok(model)
}

fn read_records(path: &Path, what: &str, hint: &str) -> Result<Vec<Record>, PipelineError> {
    require_file(path, what, hint)?;
    let outcome = read_jsonl(path)?;
    if outcome.unknown_field_warnings > 0 {
        eprintln!(
            "warning: ignored {} unknown field(s) in {}",
            outcome.unknown_field_warnings,
            path.display()
        );
    }
    Ok(outcome.records)
}

#[derive(Debug)]
pub struct GenDataSummary {
    pub cpt: usize,
    pub sft: usize,
    pub kd: usize,
    pub test: usize,
    pub out_dir: PathBuf,
}

/// Generate the four synthetic splits and write them as JSONL.
pub fn cmd_gen_data(config: &RunConfig) -> Result<GenDataSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    echo_effective(config, &paths.out_dir)?;
    let corpus = gen_corpus(&config.synth_config())?;
    let splits: [(&str, &Vec<Record>, &Path); 4] = [
        ("cpt", &corpus.cpt, &paths.cpt_data),
        ("sft", &corpus.sft, &paths.sft_data),
        ("kd", &corpus.kd, &paths.kd_data),
        ("test", &corpus.test, &paths.test_data),
    ];
    for (name, records, path) in splits {
        ensure_parent(path)?;
        write_jsonl(path, records)?;
        println!("gen split={name} records={} path={}", records.len(), path.display());
    }
    Ok(GenDataSummary {
        cpt: corpus.cpt.len(),
        sft: corpus.sft.len(),
        kd: corpus.kd.len(),
        test: corpus.test.len(),
        out_dir: paths.out_dir,
    })
}

/// Outcome of a training command: per-epoch history plus where the weights
/// were saved. Validation fields are only set by the fine-tuning stage.
#[derive(Debug)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub skipped_records: usize,
    pub checkpoint: PathBuf,
    pub initial_val: Option<PnrSummary>,
    pub epoch_val: Vec<PnrSummary>,
}

/// Next-token pre-training of the decoder on the unlabeled split.
pub fn cmd_cpt(config: &RunConfig) -> Result<TrainSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    let records = read_records(&paths.cpt_data, "pre-training data", "run gen-data first")?;
    echo_effective(config, &paths.out_dir)?;
    let root = Prng::new(config.seed);
    let mut model = ModelParams::init(config.teacher_config(), &mut root.substream("teacher_init"))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let outcome = train_cpt(
        &mut model,
        &records,
        &config.train,
        config.max_seq_len,
        &mut root.substream("cpt_order"),
    )?;
    ensure_parent(&paths.cpt_checkpoint)?;
    save_checkpoint(&model, &paths.cpt_checkpoint)?;
    println!(
        "checkpoint model=teacher stage=cpt params={} path={}",
        model.param_count(),
        paths.cpt_checkpoint.display()
    );
    Ok(TrainSummary {
        epoch_losses: outcome.epoch_losses,
        skipped_records: outcome.skipped,
        checkpoint: paths.cpt_checkpoint,
        initial_val: None,
        epoch_val: Vec::new(),
    })
}

/// Pairwise fine-tuning of the decoder on the labeled split.
pub fn cmd_sft(config: &RunConfig) -> Result<TrainSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    let records = read_records(&paths.sft_data, "fine-tuning data", "run gen-data first")?;
    let root = Prng::new(config.seed);
    let mut model = if config.train.sft_from_cpt {
        load_model_checked(
            &paths.cpt_checkpoint,
            &config.teacher_config(),
            "pre-trained checkpoint",
            "run cpt first or set train.sft_from_cpt = false",
        )?
    } else {
        ModelParams::init(config.teacher_config(), &mut root.substream("teacher_init"))
            .map_err(|e| PipelineError::Config(e.to_string()))?
    };
    echo_effective(config, &paths.out_dir)?;
    let outcome = train_sft(&mut model, &records, &config.train, config.max_seq_len, &root)?;
    ensure_parent(&paths.teacher_checkpoint)?;
    save_checkpoint(&model, &paths.teacher_checkpoint)?;
    println!(
        "checkpoint model=teacher stage=sft params={} path={}",
        model.param_count(),
        paths.teacher_checkpoint.display()
    );
    Ok(TrainSummary {
        epoch_losses: outcome.epoch_losses,
        skipped_records: outcome.skipped_records,
        checkpoint: paths.teacher_checkpoint,
        initial_val: Some(outcome.initial_val),
        epoch_val: outcome.epoch_val,
    })
}

#[derive(Debug)]
pub struct ScoreSummary {
    pub scored: usize,
    pub skipped: usize,
    pub out: PathBuf,
}

/// Score the distillation split with the fine-tuned teacher. Output keeps
/// input order; records the teacher cannot encode are dropped with a warning.
pub fn cmd_score(config: &RunConfig) -> Result<ScoreSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    let records = read_records(&paths.kd_data, "distillation data", "run gen-data first")?;
    let model = load_model_checked(
        &paths.teacher_checkpoint,
        &config.teacher_config(),
        "teacher checkpoint",
        "run sft first",
    )?;
    echo_effective(config, &paths.out_dir)?;
    let mut scored = Vec::with_capacity(records.len());
    let mut skipped = 0usize;
    for (i, mut r) in records.into_iter().enumerate() {
        let seq = match crate::textmodel::tokenizer::encode_pair(&r.doc(), config.max_seq_len) {
            Ok(seq) => seq,
            Err(e) => {
                eprintln!("warning: skipping record {} of {}: {e}", i + 1, paths.kd_data.display());
                skipped += 1;
                continue;
            }
        };
        let s = model.score(&seq).map_err(|e| PipelineError::Numeric(e.to_string()))?;
        if !s.is_finite() {
            return Err(PipelineError::Numeric(format!(
                "teacher produced a non-finite score on record {}",
                i + 1
            )));
        }
        r.score = Some(s);
        scored.push(r);
    }
    ensure_parent(&paths.scored_kd)?;
    write_jsonl(&paths.scored_kd, &scored)?;
    println!(
        "score model=teacher records={} skipped={} path={}",
        scored.len(),
        skipped,
        paths.scored_kd.display()
    );
    Ok(ScoreSummary { scored: scored.len(), skipped, out: paths.scored_kd })
}

#[derive(Debug)]
pub struct DistillSummary {
    pub epoch_losses: Vec<f64>,
    pub initial_gap: f64,
    pub epoch_gap: Vec<f64>,
    pub skipped_records: usize,
    pub checkpoint: PathBuf,
}

/// Train the encoder student to match teacher scores.
pub fn cmd_distill(config: &RunConfig) -> Result<DistillSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    let records = read_records(&paths.scored_kd, "scored distillation data", "run score first")?;
    echo_effective(config, &paths.out_dir)?;
    let root = Prng::new(config.seed);
    let mut student =
        ModelParams::init(config.student_config(), &mut root.substream("student_init"))
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    let outcome = train_distill(
        &mut student,
        &records,
        config.train.distill_loss,
        &config.train,
        config.max_seq_len,
        &root,
    )?;
    ensure_parent(&paths.student_checkpoint)?;
    save_checkpoint(&student, &paths.student_checkpoint)?;
    println!(
        "checkpoint model=student stage=distill params={} path={}",
        student.param_count(),
        paths.student_checkpoint.display()
    );
    Ok(DistillSummary {
        epoch_losses: outcome.epoch_losses,
        initial_gap: outcome.initial_gap,
        epoch_gap: outcome.epoch_gap,
        skipped_records: outcome.skipped,
        checkpoint: paths.student_checkpoint,
    })
}

/// Ranking quality of one model on the held-out labeled split.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EvalReport {
    pub target: String,
    pub pnr_mean_finite: Option<f64>,
    pub pnr_finite: usize,
    pub pnr_infinite: usize,
    pub pnr_undefined: usize,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub queries: usize,
    pub skipped_records: usize,
    pub dropped_groups: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let pnr = PnrSummary {
            mean_finite: self.pnr_mean_finite,
            finite: self.pnr_finite,
            infinite: self.pnr_infinite,
            undefined: self.pnr_undefined,
        };
        format!(
            "target={}\npnr={}\npnr_finite={}\npnr_infinite={}\npnr_undefined={}\n\
             ndcg@5={:.6}\nndcg@10={:.6}\nqueries={}\nskipped_records={}\ndropped_groups={}\n",
            self.target,
            format_pnr(&pnr),
            self.pnr_finite,
            self.pnr_infinite,
            self.pnr_undefined,
            self.ndcg_at_5,
            self.ndcg_at_10,
            self.queries,
            self.skipped_records,
            self.dropped_groups,
        )
    }
}

fn target_checkpoint<'a>(
    config: &RunConfig,
    paths: &'a super::config::ResolvedPaths,
    target: EvalTarget,
) -> (&'a Path, ModelConfig, &'static str, &'static str) {
    match target {
        EvalTarget::Teacher => (
            paths.teacher_checkpoint.as_path(),
            config.teacher_config(),
            "teacher checkpoint",
            "run sft first",
        ),
        EvalTarget::Student => (
            paths.student_checkpoint.as_path(),
            config.student_config(),
            "student checkpoint",
            "run distill first",
        ),
    }
}

/// Compute ranking metrics for a model over grouped, labeled, scored docs.
pub fn eval_groups(
    model: &ModelParams,
    groups: &[PreppedGroup],
    target: &str,
    skipped_records: usize,
) -> Result<EvalReport, PipelineError> {
    let mut kept: Vec<&PreppedGroup> = Vec::new();
    let mut dropped_groups = 0usize;
    for g in groups {
        if g.docs.len() >= 2 {
            kept.push(g);
        } else {
            dropped_groups += 1;
        }
    }
    if kept.is_empty() {
        return Err(PipelineError::Degenerate(
            "evaluation needs at least one query with two or more documents".into(),
        ));
    }
    let mut scored_groups: Vec<Vec<ScoredItem>> = Vec::with_capacity(kept.len());
    for g in &kept {
        let mut items = Vec::with_capacity(g.docs.len());
        for d in &g.docs {
            let label = d.label.ok_or_else(|| {
                PipelineError::Degenerate(format!(
                    "unlabeled document under query '{}' in the evaluation split",
                    g.query
                ))
            })?;
            let score = model
                .score(&d.seq)
                .map_err(|e| PipelineError::Numeric(e.to_string()))? as f64;
            items.push(ScoredItem { label, score });
        }
        scored_groups.push(items);
    }
    let pnr = corpus_pnr(&scored_groups)?;
    let mut ndcg5 = 0.0f64;
    let mut ndcg10 = 0.0f64;
    for items in &scored_groups {
        ndcg5 += ndcg_at_k(items, 5)?;
        ndcg10 += ndcg_at_k(items, 10)?;
    }
    let n = scored_groups.len() as f64;
    Ok(EvalReport {
        target: target.to_string(),
        pnr_mean_finite: pnr.mean_finite,
        pnr_finite: pnr.finite,
        pnr_infinite: pnr.infinite,
        pnr_undefined: pnr.undefined,
        ndcg_at_5: ndcg5 / n,
        ndcg_at_10: ndcg10 / n,
        queries: scored_groups.len(),
        skipped_records,
        dropped_groups,
    })
}

/// Evaluate the configured model on the test split and write a report.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    let records = read_records(&paths.test_data, "test data", "run gen-data first")?;
    let target = config.eval.target;
    let (ckpt, expect, what, hint) = target_checkpoint(config, &paths, target);
    let model = load_model_checked(ckpt, &expect, what, hint)?;
    echo_effective(config, &paths.out_dir)?;
    let (groups, skipped) = prep_groups(&records, config.max_seq_len);
    let report = eval_groups(&model, &groups, &target.to_string(), skipped)?;
    std::fs::create_dir_all(&paths.report_dir)
        .map_err(|e| PipelineError::Io(format!("create {}: {e}", paths.report_dir.display())))?;
    let text_path = paths.report_dir.join(format!("eval_{target}.txt"));
    std::fs::write(&text_path, report.to_text()).map_err(io_err)?;
    let json_path = paths.report_dir.join(format!("eval_{target}.json"));
    let json = serde_json::to_string_pretty(&report).map_err(io_err)?;
    std::fs::write(&json_path, json + "\n").map_err(io_err)?;
    print!("{}", report.to_text());
    println!("report path={}", text_path.display());
    Ok(report)
}

#[derive(Debug)]
pub struct BenchSummary {
    pub teacher: BenchReport,
    pub student: BenchReport,
    pub batch: usize,
    pub seq_len: usize,
    pub iters: usize,
}

/// Compare forward latency and size of the two architectures. Weights do not
/// affect timing, so the models are initialized fresh from the config.
pub fn cmd_bench(config: &RunConfig) -> Result<BenchSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    echo_effective(config, &paths.out_dir)?;
    let b = &config.bench;
    if b.seq_len > config.max_seq_len {
        return Err(PipelineError::Config(format!(
            "bench.seq_len {} exceeds max_seq_len {}",
            b.seq_len, config.max_seq_len
        )));
    }
    let root = Prng::new(config.seed);
    let teacher = ModelParams::init(config.teacher_config(), &mut root.substream("teacher_init"))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let student = ModelParams::init(config.student_config(), &mut root.substream("student_init"))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let t = latency_bench(&teacher, b.batch, b.seq_len, b.iters)?;
    let s = latency_bench(&student, b.batch, b.seq_len, b.iters)?;
    for (name, r) in [("teacher", &t), ("student", &s)] {
        println!(
            "bench model={name} params={} mean_ms_per_batch={:.3} batch={} seq_len={} iters={}",
            r.param_count, r.mean_ms_per_batch, b.batch, b.seq_len, b.iters
        );
    }
    Ok(BenchSummary { teacher: t, student: s, batch: b.batch, seq_len: b.seq_len, iters: b.iters })
}

#[derive(Debug)]
pub struct ScoreDistSummary {
    pub target: EvalTarget,
    pub count: usize,
    pub skipped: usize,
    pub bins: usize,
    pub path: PathBuf,
}

/// Histogram of a model's scores over the distillation split, written as CSV.
pub fn cmd_score_dist(config: &RunConfig) -> Result<ScoreDistSummary, PipelineError> {
    config.validate()?;
    let paths = config.resolved_paths();
    let records = read_records(&paths.kd_data, "distillation data", "run gen-data first")?;
    let target = config.score_dist.target;
    let (ckpt, expect, what, hint) = target_checkpoint(config, &paths, target);
    let model = load_model_checked(ckpt, &expect, what, hint)?;
    echo_effective(config, &paths.out_dir)?;
    let mut scores = Vec::with_capacity(records.len());
    let mut skipped = 0usize;
    for r in &records {
        match crate::textmodel::tokenizer::encode_pair(&r.doc(), config.max_seq_len) {
            Ok(seq) => {
                let s = model.score(&seq).map_err(|e| PipelineError::Numeric(e.to_string()))?;
                scores.push(s as f64);
            }
            Err(_) => skipped += 1,
        }
    }
    let bins = score_histogram(&scores, config.score_dist.bins)?;
    let csv = histogram_csv(&bins);
    std::fs::create_dir_all(&paths.report_dir)
        .map_err(|e| PipelineError::Io(format!("create {}: {e}", paths.report_dir.display())))?;
    let path = paths.report_dir.join(format!("score_dist_{target}.csv"));
    std::fs::write(&path, &csv).map_err(io_err)?;
    println!(
        "score-dist model={target} scores={} skipped={} bins={} path={}",
        scores.len(),
        skipped,
        bins.len(),
        path.display()
    );
    Ok(ScoreDistSummary { target, count: scores.len(), skipped, bins: bins.len(), path })
}
