//! Training loops shared by the pipeline commands. Each engine prints one
//! machine-parseable log line per epoch and returns the numeric history.

use super::config::{LossMode, TrainSection};
use super::PipelineError;
use crate::datagen::Record;
use crate::metrics::{corpus_pnr, PnrSummary, ScoredItem};
use crate::numerics::{Adam, Prng, Tape};
use crate::objectives::{
    cpt_loss, hinge_loss, hybrid_loss, margin_mse_loss, mine_label_pairs, mine_score_pairs,
    point_mse_loss,
};
use crate::textmodel::tokenizer::encode_pair;
use crate::textmodel::ModelParams;

/// One encodable document: its tokenized form plus whatever side data the
/// split carries.
pub struct PreppedDoc {
    pub seq: Vec<u16>,
    pub label: Option<u8>,
    pub teacher_score: Option<f32>,
}

pub struct PreppedGroup {
    pub query: String,
    pub docs: Vec<PreppedDoc>,
}

/// Tokenize records grouped by query in first-appearance order. Records the
/// model cannot accept (over-long or empty queries) are skipped and counted.
pub fn prep_groups(records: &[Record], max_len: usize) -> (Vec<PreppedGroup>, usize) {
    let mut groups: Vec<PreppedGroup> = Vec::new();
    let mut by_query: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut skipped = 0usize;
    for r in records {
        let seq = match encode_pair(&r.doc(), max_len) {
            Ok(seq) => seq,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let gi = *by_query.entry(r.query.as_str()).or_insert_with(|| {
            groups.push(PreppedGroup { query: r.query.clone(), docs: Vec::new() });
            groups.len() - 1
        });
        groups[gi].docs.push(PreppedDoc { seq, label: r.label, teacher_score: r.score });
    }
    (groups, skipped)
}

fn numeric(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Numeric(e.to_string())
}

/// Mean held-out ranking quality of the current model.
pub fn validation_pnr(
    model: &ModelParams,
    groups: &[&PreppedGroup],
) -> Result<PnrSummary, PipelineError> {
    let mut scored: Vec<Vec<ScoredItem>> = Vec::new();
    for g in groups {
        if g.docs.len() < 2 {
            continue;
        }
        let mut items = Vec::with_capacity(g.docs.len());
        for d in &g.docs {
            let label = d.label.ok_or_else(|| {
                PipelineError::Degenerate(format!("unlabeled document under query '{}'", g.query))
            })?;
            let score = model.score(&d.seq).map_err(numeric)? as f64;
            items.push(ScoredItem { label, score });
        }
        scored.push(items);
    }
    if scored.is_empty() {
        return Ok(PnrSummary { mean_finite: None, finite: 0, infinite: 0, undefined: 0 });
    }
    corpus_pnr(&scored).map_err(|e| PipelineError::Degenerate(e.to_string()))
}

/// Render a PNR summary the way log lines and reports expect it.
pub fn format_pnr(summary: &PnrSummary) -> String {
    match summary.mean_finite {
        Some(mean) => format!("{mean:.6}"),
        None if summary.infinite > 0 => "inf".into(),
        None => "undefined".into(),
    }
}

pub struct CptOutcome {
    pub epoch_losses: Vec<f64>,
    pub skipped: usize,
}

/// Next-token training over the pre-training split.
pub fn train_cpt(
    model: &mut ModelParams,
    records: &[Record],
    train: &TrainSection,
    max_len: usize,
    order_rng: &mut Prng,
) -> Result<CptOutcome, PipelineError> {
    let mut usable: Vec<usize> = Vec::new();
    let mut skipped = 0usize;
    for (i, r) in records.iter().enumerate() {
        let fits = encode_pair(&r.doc(), max_len).is_ok();
        if fits && !(r.title.is_empty() && r.summary.is_empty()) {
            usable.push(i);
        } else {
            skipped += 1;
        }
    }
    if usable.is_empty() && train.cpt_epochs > 0 {
        return Err(PipelineError::Degenerate(
            "pre-training split has no trainable documents".into(),
        ));
    }
    let mut opt = Adam::new(train.cpt_lr);
    let mut epoch_losses = Vec::with_capacity(train.cpt_epochs);
    for epoch in 1..=train.cpt_epochs {
        order_rng.shuffle(&mut usable);
        let mut total = 0.0f64;
        for chunk in usable.chunks(train.batch_size) {
            let mut tape = Tape::new();
            let lease = model.lease(&mut tape, true).map_err(numeric)?;
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let doc = records[i].doc();
                losses.push(cpt_loss(model, &mut tape, &lease, &doc, max_len).map_err(numeric)?);
            }
            let batch_loss = tape.mean_scalars(&losses).map_err(numeric)?;
            let value = tape.scalar(batch_loss).map_err(numeric)? as f64;
            tape.backward(batch_loss).map_err(numeric)?;
            opt.step(&mut tape, &lease.ids).map_err(numeric)?;
            model.absorb(&tape, &lease);
            total += value * chunk.len() as f64;
        }
        let epoch_loss = total / usable.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(PipelineError::Numeric(format!(
                "pre-training loss diverged at epoch {epoch}: {epoch_loss}"
            )));
        }
        println!("epoch={epoch} split=cpt loss={epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
    }
    Ok(CptOutcome { epoch_losses, skipped })
}

pub struct SftOutcome {
    pub epoch_losses: Vec<f64>,
    pub epoch_val: Vec<PnrSummary>,
    pub initial_val: PnrSummary,
    pub skipped_records: usize,
}

/// Pairwise hinge fine-tuning with a held-out validation slice.
pub fn train_sft(
    model: &mut ModelParams,
    records: &[Record],
    train: &TrainSection,
    max_len: usize,
    root: &Prng,
) -> Result<SftOutcome, PipelineError> {
    if records.iter().any(|r| r.label.is_none()) {
        return Err(PipelineError::Degenerate(
            "fine-tuning split contains unlabeled records".into(),
        ));
    }
    let (groups, skipped_records) = prep_groups(records, max_len);
    if groups.is_empty() {
        return Err(PipelineError::Degenerate(
            "fine-tuning split has no usable documents".into(),
        ));
    }

    let mut split_rng = root.substream("sft_val");
    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    split_rng.shuffle(&mut group_order);
    let mut n_val = ((groups.len() as f64) * train.val_fraction).round() as usize;
    n_val = n_val.min(groups.len().saturating_sub(1));
    let val_groups: Vec<&PreppedGroup> = group_order[..n_val].iter().map(|&i| &groups[i]).collect();
    let train_groups: Vec<&PreppedGroup> =
        group_order[n_val..].iter().map(|&i| &groups[i]).collect();

    let has_pairs = train_groups.iter().any(|g| {
        let labels: Vec<u8> = g.docs.iter().map(|d| d.label.unwrap()).collect();
        labels.iter().any(|&l| l != labels[0])
    });
    if !has_pairs {
        return Err(PipelineError::Degenerate(
            "fine-tuning split has no pairs with distinct labels".into(),
        ));
    }

    let initial_val = validation_pnr(model, &val_groups)?;

    let mut pair_rng = root.substream("sft_pairs");
    let mut order_rng = root.substream("sft_order");
    let mut opt = Adam::new(train.sft_lr);
    let mut epoch_losses = Vec::new();
    let mut epoch_val = Vec::new();
    for epoch in 1..=train.sft_epochs {
        let mut pairs: Vec<(&PreppedDoc, &PreppedDoc)> = Vec::new();
        for g in &train_groups {
            let labels: Vec<u8> = g.docs.iter().map(|d| d.label.unwrap()).collect();
            for p in mine_label_pairs(&labels, train.pairs_per_query, &mut pair_rng) {
                pairs.push((&g.docs[p.pos], &g.docs[p.neg]));
            }
        }
        order_rng.shuffle(&mut pairs);
        let mut total = 0.0f64;
        for chunk in pairs.chunks(train.batch_size) {
            let mut tape = Tape::new();
            let lease = model.lease(&mut tape, true).map_err(numeric)?;
            let mut losses = Vec::with_capacity(chunk.len());
            for (pos, neg) in chunk {
                let sp = model.score_graph(&mut tape, &lease, &pos.seq).map_err(numeric)?;
                let sn = model.score_graph(&mut tape, &lease, &neg.seq).map_err(numeric)?;
                losses.push(hinge_loss(&mut tape, sp, sn, train.hinge_margin).map_err(numeric)?);
            }
            let batch_loss = tape.mean_scalars(&losses).map_err(numeric)?;
            let value = tape.scalar(batch_loss).map_err(numeric)? as f64;
            tape.backward(batch_loss).map_err(numeric)?;
            opt.step(&mut tape, &lease.ids).map_err(numeric)?;
            model.absorb(&tape, &lease);
            total += value * chunk.len() as f64;
        }
        let epoch_loss = if pairs.is_empty() { 0.0 } else { total / pairs.len() as f64 };
        let val = validation_pnr(model, &val_groups)?;
        println!(
            "epoch={epoch} split=sft loss={epoch_loss:.6} val_pnr={}",
            format_pnr(&val)
        );
        epoch_losses.push(epoch_loss);
        epoch_val.push(val);
    }
    Ok(SftOutcome { epoch_losses, epoch_val, initial_val, skipped_records })
}

pub struct DistillOutcome {
    pub epoch_losses: Vec<f64>,
    /// Mean |student - teacher| before training.
    pub initial_gap: f64,
    /// Mean |student - teacher| after each epoch.
    pub epoch_gap: Vec<f64>,
    pub skipped: usize,
}

enum Unit<'a> {
    Pair(&'a PreppedDoc, &'a PreppedDoc),
    Single(&'a PreppedDoc),
}

/// Distill teacher scores into the student with the configured loss.
pub fn train_distill(
    student: &mut ModelParams,
    records: &[Record],
    mode: LossMode,
    train: &TrainSection,
    max_len: usize,
    root: &Prng,
) -> Result<DistillOutcome, PipelineError> {
    if records.iter().any(|r| r.score.is_none()) {
        return Err(PipelineError::Degenerate(
            "distillation split contains unscored records; run score first".into(),
        ));
    }
    let (groups, skipped) = prep_groups(records, max_len);
    if groups.is_empty() {
        return Err(PipelineError::Degenerate(
            "distillation split has no usable documents".into(),
        ));
    }
    let mut pair_rng = root.substream("distill_pairs");
    let mut order_rng = root.substream("distill_order");
    let mut opt = Adam::new(train.distill_lr);
    let initial_gap = mean_teacher_gap(student, &groups)?;
    let mut epoch_losses = Vec::new();
    let mut epoch_gap = Vec::new();
    for epoch in 1..=train.distill_epochs {
        let mut units: Vec<Unit> = Vec::new();
        for g in &groups {
            let scores: Vec<f32> = g.docs.iter().map(|d| d.teacher_score.unwrap()).collect();
            let mined = mine_score_pairs(&scores, train.pairs_per_query, &mut pair_rng);
            if mined.is_empty() {
                // No usable order within the group: fall back to plain
                // point-wise regression, except in pure margin mode which
                // has no point term.
                if mode != LossMode::Margin {
                    units.extend(g.docs.iter().map(Unit::Single));
                }
            } else {
                units.extend(mined.into_iter().map(|p| Unit::Pair(&g.docs[p.pos], &g.docs[p.neg])));
            }
        }
        if units.is_empty() {
            return Err(PipelineError::Degenerate(
                "distillation mined no trainable pairs or points".into(),
            ));
        }
        order_rng.shuffle(&mut units);
        let mut total = 0.0f64;
        let unit_count = units.len();
        for chunk in units.chunks(train.batch_size) {
            let mut tape = Tape::new();
            let lease = student.lease(&mut tape, true).map_err(numeric)?;
            let mut losses = Vec::with_capacity(chunk.len());
            for unit in chunk {
                let loss = match unit {
                    Unit::Pair(pos, neg) => {
                        let sp = student.score_graph(&mut tape, &lease, &pos.seq).map_err(numeric)?;
                        let sn = student.score_graph(&mut tape, &lease, &neg.seq).map_err(numeric)?;
                        let (tp, tn) = (pos.teacher_score.unwrap(), neg.teacher_score.unwrap());
                        match mode {
                            LossMode::Point => {
                                point_mse_loss(&mut tape, tp, tn, sp, sn).map_err(numeric)?
                            }
                            LossMode::Margin => {
                                margin_mse_loss(&mut tape, tp, tn, sp, sn).map_err(numeric)?
                            }
                            LossMode::Hybrid => {
                                hybrid_loss(&mut tape, tp, tn, sp, sn, train.margin_weight)
                                    .map_err(numeric)?
                            }
                        }
                    }
                    Unit::Single(d) => {
                        let s = student.score_graph(&mut tape, &lease, &d.seq).map_err(numeric)?;
                        let shape = tape.shape(s).to_vec();
                        let t = tape
                            .leaf(vec![d.teacher_score.unwrap(); 1], &shape, false)
                            .map_err(numeric)?;
                        tape.mse(s, t).map_err(numeric)?
                    }
                };
                losses.push(loss);
            }
            let batch_loss = tape.mean_scalars(&losses).map_err(numeric)?;
            let value = tape.scalar(batch_loss).map_err(numeric)? as f64;
            tape.backward(batch_loss).map_err(numeric)?;
            opt.step(&mut tape, &lease.ids).map_err(numeric)?;
            student.absorb(&tape, &lease);
            total += value * chunk.len() as f64;
        }
        let epoch_loss = total / unit_count as f64;
        println!("epoch={epoch} split=distill loss={epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
        epoch_gap.push(mean_teacher_gap(student, &groups)?);
    }
    Ok(DistillOutcome { epoch_losses, initial_gap, epoch_gap, skipped })
}

/// Mean absolute difference between student and teacher scores.
pub fn mean_teacher_gap(
    student: &ModelParams,
    groups: &[PreppedGroup],
) -> Result<f64, PipelineError> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for g in groups {
        for d in &g.docs {
            let s = student.score(&d.seq).map_err(numeric)? as f64;
            total += (s - d.teacher_score.unwrap() as f64).abs();
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}
