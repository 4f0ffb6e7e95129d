//! Run configuration: one TOML file drives every command. All fields have
//! defaults; CLI flags override seed, output directory, and distill loss.

use super::PipelineError;
use crate::datagen::SynthConfig;
use crate::textmodel::{ModelConfig, ModelKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Point,
    Margin,
    Hybrid,
}

impl std::str::FromStr for LossMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "point" => Ok(LossMode::Point),
            "margin" => Ok(LossMode::Margin),
            "hybrid" => Ok(LossMode::Hybrid),
            other => Err(format!("unknown loss '{other}', expected point|margin|hybrid")),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Point => "point",
            LossMode::Margin => "margin",
            LossMode::Hybrid => "hybrid",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    Teacher,
    Student,
}

impl std::fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalTarget::Teacher => "teacher",
            EvalTarget::Student => "student",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { d_model: 64, n_layers: 4, n_heads: 4, d_ff: 256 }
    }
}

fn default_student() -> ModelSection {
    ModelSection { d_model: 32, n_layers: 2, n_heads: 2, d_ff: 128 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Required score gap in the pairwise hinge.
    pub hinge_margin: f32,
    /// Weight on the margin term of the hybrid distillation loss.
    pub margin_weight: f32,
    pub cpt_lr: f32,
    pub sft_lr: f32,
    pub distill_lr: f32,
    pub cpt_epochs: usize,
    pub sft_epochs: usize,
    pub distill_epochs: usize,
    pub batch_size: usize,
    /// Cap on mined pairs per query per epoch.
    pub pairs_per_query: usize,
    /// Fraction of fine-tuning queries held out for validation ranking.
    pub val_fraction: f64,
    /// Whether fine-tuning starts from the pre-trained checkpoint.
    pub sft_from_cpt: bool,
    pub distill_loss: LossMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            hinge_margin: 0.1,
            margin_weight: 0.4,
            cpt_lr: 1e-3,
            sft_lr: 1e-3,
            distill_lr: 2e-3,
            cpt_epochs: 1,
            sft_epochs: 1,
            distill_epochs: 2,
            batch_size: 8,
            pairs_per_query: 8,
            val_fraction: 0.1,
            sft_from_cpt: true,
            distill_loss: LossMode::Hybrid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub target: EvalTarget,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { target: EvalTarget::Teacher }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub batch: usize,
    pub seq_len: usize,
    pub iters: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { batch: 48, seq_len: 256, iters: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreDistSection {
    pub target: EvalTarget,
    pub bins: usize,
}

impl Default for ScoreDistSection {
    fn default() -> Self {
        ScoreDistSection { target: EvalTarget::Teacher, bins: 20 }
    }
}

/// File locations. Everything unset defaults to a layout under `out_dir`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub out_dir: Option<PathBuf>,
    pub cpt_data: Option<PathBuf>,
    pub sft_data: Option<PathBuf>,
    pub kd_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub scored_kd: Option<PathBuf>,
    pub cpt_checkpoint: Option<PathBuf>,
    pub teacher_checkpoint: Option<PathBuf>,
    pub student_checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Concrete file locations after defaulting.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPaths {
    pub out_dir: PathBuf,
    pub cpt_data: PathBuf,
    pub sft_data: PathBuf,
    pub kd_data: PathBuf,
    pub test_data: PathBuf,
    pub scored_kd: PathBuf,
    pub cpt_checkpoint: PathBuf,
    pub teacher_checkpoint: PathBuf,
    pub student_checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub max_seq_len: usize,
    pub paths: PathsSection,
    pub synth: SynthConfig,
    pub teacher: ModelSection,
    pub student: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub score_dist: ScoreDistSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            max_seq_len: 256,
            paths: PathsSection::default(),
            synth: SynthConfig::default(),
            teacher: ModelSection::default(),
            student: default_student(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
            score_dist: ScoreDistSection::default(),
        }
    }
}

impl RunConfig {

    pub fn teacher_config(&self) -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Decoder,
            d_model: self.teacher.d_model,
            n_layers: self.teacher.n_layers,
            n_heads: self.teacher.n_heads,
            d_ff: self.teacher.d_ff,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn student_config(&self) -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Encoder,
            d_model: self.student.d_model,
            n_layers: self.student.n_layers,
            n_heads: self.student.n_heads,
            d_ff: self.student.d_ff,
            max_seq_len: self.max_seq_len,
        }
    }

    /// Fill in every unset path from the output directory layout.
    pub fn resolved_paths(&self) -> ResolvedPaths {
        let out = self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
        let pick = |explicit: &Option<PathBuf>, tail: &str| {
            explicit.clone().unwrap_or_else(|| out.join(tail))
        };
        ResolvedPaths {
            cpt_data: pick(&self.paths.cpt_data, "data/cpt.jsonl"),
            sft_data: pick(&self.paths.sft_data, "data/sft.jsonl"),
            kd_data: pick(&self.paths.kd_data, "data/kd.jsonl"),
            test_data: pick(&self.paths.test_data, "data/test.jsonl"),
            scored_kd: pick(&self.paths.scored_kd, "data/kd_scored.jsonl"),
            cpt_checkpoint: pick(&self.paths.cpt_checkpoint, "ckpt/teacher_cpt.bin"),
            teacher_checkpoint: pick(&self.paths.teacher_checkpoint, "ckpt/teacher.bin"),
            student_checkpoint: pick(&self.paths.student_checkpoint, "ckpt/student.bin"),
            report_dir: pick(&self.paths.report_dir, "report"),
            out_dir: out,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.max_seq_len < 8 {
            return bad(format!("max_seq_len must be at least 8, got {}", self.max_seq_len));
        }
        self.teacher_config()
            .validate()
            .map_err(|e| PipelineError::Config(format!("teacher: {e}")))?;
        self.student_config()
            .validate()
            .map_err(|e| PipelineError::Config(format!("student: {e}")))?;
        let t = &self.train;
        if !(t.hinge_margin > 0.0) {
            return bad(format!("hinge_margin must be positive, got {}", t.hinge_margin));
        }
        if !(t.margin_weight >= 0.0) {
            return bad(format!("margin_weight must be nonnegative, got {}", t.margin_weight));
        }
        for (name, lr) in [("cpt_lr", t.cpt_lr), ("sft_lr", t.sft_lr), ("distill_lr", t.distill_lr)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be a finite nonnegative number, got {lr}"));
            }
        }
        if t.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if t.pairs_per_query < 1 {
            return bad("pairs_per_query must be at least 1".into());
        }
        if !(0.0..=0.5).contains(&t.val_fraction) {
            return bad(format!("val_fraction must be in [0, 0.5], got {}", t.val_fraction));
        }
        if self.score_dist.bins < 1 {
            return bad("score_dist.bins must be at least 1".into());
        }
        let mut synth = self.synth.clone();
        synth.seed = self.seed;
        synth
            .validate()
            .map_err(|e| PipelineError::Config(format!("synth: {e}")))?;
        Ok(())
    }

    /// The generator config with the run seed injected.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, ..self.synth.clone() }
    }
}

/// CLI-level overrides applied on top of the loaded file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub loss: Option<LossMode>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.paths.out_dir = Some(out.clone());
        }
        if let Some(loss) = self.loss {
            config.train.distill_loss = loss;
        }
    }
}

/// Read and parse a config file; defaults fill anything missing.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let config: RunConfig = toml::from_str(&raw).map_err(|e| {
        PipelineError::Config(format!("cannot parse config {}: {e}", path.display()))
    })?;
    Ok(config)
}

/// Write the fully-resolved config next to the run's other outputs.
pub fn echo_effective(config: &RunConfig, out_dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Io(format!("create {}: {e}", out_dir.display())))?;
    let text = toml::to_string_pretty(config)
        .map_err(|e| PipelineError::Io(format!("serialize effective config: {e}")))?;
    let path = out_dir.join("effective.toml");
    std::fs::write(&path, text)
        .map_err(|e| PipelineError::Io(format!("write {}: {e}", path.display())))?;
    Ok(())
}
