//! Pre-norm transformer in two flavors: a causal decoder (teacher) and a
//! bidirectional encoder (student).
//!
//! Parameters live outside any tape in `ModelParams`. Each training step
//! leases them onto a fresh tape as leaf tensors, builds the step's graph,
//! runs backward and the optimizer against the tape, then absorbs the updated
//! values back. A frozen model scores sequences without keeping the tape.

use serde::{Deserialize, Serialize};

use super::tokenizer::{END, START, VOCAB_SIZE};
use super::ModelError;
use crate::numerics::{Prng, Tape, TensorId};

const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Causal attention, scores from the final position.
    Decoder,
    /// Bidirectional attention, scores from the first position.
    Encoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Default teacher: a ~250k parameter decoder.
    pub fn teacher() -> Self {
        ModelConfig {
            kind: ModelKind::Decoder,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 256,
        }
    }

    /// Default student: a ~42k parameter encoder.
    pub fn student() -> Self {
        ModelConfig {
            kind: ModelKind::Encoder,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_seq_len: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_layers == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return Err(ModelError::BadConfig("zero-sized dimension".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "{} heads do not divide width {}",
                self.n_heads, self.d_model
            )));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub(crate) fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut layout = vec![
            ("tok_emb".into(), vec![VOCAB_SIZE, d]),
            ("pos_emb".into(), vec![self.max_seq_len, d]),
        ];
        for l in 0..self.n_layers {
            for (suffix, shape) in [
                ("ln1.gain", vec![d]),
                ("ln1.shift", vec![d]),
                ("attn.wq", vec![d, d]),
                ("attn.bq", vec![d]),
                ("attn.wk", vec![d, d]),
                ("attn.bk", vec![d]),
                ("attn.wv", vec![d, d]),
                ("attn.bv", vec![d]),
                ("attn.wo", vec![d, d]),
                ("attn.bo", vec![d]),
                ("ln2.gain", vec![d]),
                ("ln2.shift", vec![d]),
                ("mlp.w1", vec![d, self.d_ff]),
                ("mlp.b1", vec![self.d_ff]),
                ("mlp.w2", vec![self.d_ff, d]),
                ("mlp.b2", vec![d]),
            ] {
                layout.push((format!("layer{l}.{suffix}"), shape));
            }
        }
        layout.push(("final_norm.gain".into(), vec![d]));
        layout.push(("final_norm.shift".into(), vec![d]));
        layout.push(("head.w".into(), vec![d, 1]));
        layout.push(("head.b".into(), vec![1]));
        if self.kind == ModelKind::Decoder {
            layout.push(("lm.w".into(), vec![d, VOCAB_SIZE]));
            layout.push(("lm.b".into(), vec![VOCAB_SIZE]));
        }
        layout
    }
}

pub(crate) struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// A model's parameters, independent of any tape.
pub struct ModelParams {
    pub config: ModelConfig,
    pub(crate) tensors: Vec<NamedTensor>,
}

/// Tape ids of one leased copy of the parameters, in storage order.
pub struct Leased {
    pub ids: Vec<TensorId>,
}

impl ModelParams {
    /// Fresh model: weights from N(0, 0.02), biases zero, norms identity.
    pub fn init(config: ModelConfig, rng: &mut Prng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut stream = rng.substream("model_init");
        let tensors = config
            .tensor_layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let last = name.rsplit('.').next().unwrap();
                let data = match last {
                    "gain" => vec![1.0; n],
                    "shift" | "b" | "bq" | "bk" | "bv" | "bo" | "b1" | "b2" => vec![0.0; n],
                    _ => (0..n).map(|_| stream.normal_f32() * INIT_STD).collect(),
                };
                NamedTensor { name, shape, data }
            })
            .collect();
        Ok(ModelParams { config, tensors })
    }

    pub(crate) fn from_tensors(
        config: ModelConfig,
        tensors: Vec<NamedTensor>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(ModelParams { config, tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub(crate) fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    /// Tensor names in storage order, matching `Leased::ids`.
    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    /// Tensor data by name, mainly for tests.
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| (t.shape.as_slice(), t.data.as_slice()))
    }

    /// Push every parameter onto a tape as a leaf.
    pub fn lease(&self, tape: &mut Tape, trainable: bool) -> Result<Leased, ModelError> {
        let mut ids = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            ids.push(tape.leaf(t.data.clone(), &t.shape, trainable)?);
        }
        Ok(Leased { ids })
    }

    /// Copy updated values back from a tape after optimizer steps.
    pub fn absorb(&mut self, tape: &Tape, lease: &Leased) {
        for (t, &id) in self.tensors.iter_mut().zip(&lease.ids) {
            t.data.copy_from_slice(tape.data(id));
        }
    }

    fn id(&self, lease: &Leased, name: &str) -> TensorId {
        let idx = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"));
        lease.ids[idx]
    }

    fn check_seq(&self, seq: &[u16]) -> Result<(), ModelError> {
        if seq.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: seq.len(),
                max_len: self.config.max_seq_len,
            });
        }
        match self.config.kind {
            ModelKind::Decoder => {
                if seq.last() != Some(&END) {
                    return Err(ModelError::MissingEnd);
                }
            }
            ModelKind::Encoder => {
                if seq.first() != Some(&START) {
                    return Err(ModelError::MissingStart);
                }
            }
        }
        Ok(())
    }

    /// Final hidden states [t, d_model] for a sequence.
    pub fn hidden_graph(
        &self,
        tape: &mut Tape,
        lease: &Leased,
        seq: &[u16],
    ) -> Result<TensorId, ModelError> {
        self.check_seq(seq)?;
        let causal = self.config.kind == ModelKind::Decoder;
        let positions: Vec<u16> = (0..seq.len() as u16).collect();
        let tok = tape.embedding_lookup(self.id(lease, "tok_emb"), seq)?;
        let pos = tape.embedding_lookup(self.id(lease, "pos_emb"), &positions)?;
        let mut x = tape.add(tok, pos)?;
        for l in 0..self.config.n_layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let h = tape.layer_norm(
                x,
                self.id(lease, &name("ln1.gain")),
                self.id(lease, &name("ln1.shift")),
                LN_EPS,
            )?;
            let q = tape.matmul(h, self.id(lease, &name("attn.wq")))?;
            let q = tape.add_bias(q, self.id(lease, &name("attn.bq")))?;
            let k = tape.matmul(h, self.id(lease, &name("attn.wk")))?;
            let k = tape.add_bias(k, self.id(lease, &name("attn.bk")))?;
            let v = tape.matmul(h, self.id(lease, &name("attn.wv")))?;
            let v = tape.add_bias(v, self.id(lease, &name("attn.bv")))?;
            let a = tape.attention(q, k, v, self.config.n_heads, causal)?;
            let a = tape.matmul(a, self.id(lease, &name("attn.wo")))?;
            let a = tape.add_bias(a, self.id(lease, &name("attn.bo")))?;
            x = tape.add(x, a)?;
            let h2 = tape.layer_norm(
                x,
                self.id(lease, &name("ln2.gain")),
                self.id(lease, &name("ln2.shift")),
                LN_EPS,
            )?;
            let f = tape.matmul(h2, self.id(lease, &name("mlp.w1")))?;
            let f = tape.add_bias(f, self.id(lease, &name("mlp.b1")))?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, self.id(lease, &name("mlp.w2")))?;
            let f = tape.add_bias(f, self.id(lease, &name("mlp.b2")))?;
            x = tape.add(x, f)?;
        }
        Ok(tape.layer_norm(
            x,
            self.id(lease, "final_norm.gain"),
            self.id(lease, "final_norm.shift"),
            LN_EPS,
        )?)
    }

    /// Scalar relevance score: affine head over the pooled hidden state.
    ///
    /// Decoders pool the final position (the end token, which has seen the
    /// whole pair); encoders pool the first (the start token as a summary
    /// slot filled by bidirectional attention).
    pub fn score_graph(
        &self,
        tape: &mut Tape,
        lease: &Leased,
        seq: &[u16],
    ) -> Result<TensorId, ModelError> {
        let hidden = self.hidden_graph(tape, lease, seq)?;
        let pool_at = match self.config.kind {
            ModelKind::Decoder => seq.len() - 1,
            ModelKind::Encoder => 0,
        };
        let pooled = tape.row(hidden, pool_at)?;
        let s = tape.matmul(pooled, self.id(lease, "head.w"))?;
        let bias = self.id(lease, "head.b");
        Ok(tape.add_bias(s, bias)?)
    }

    /// Next-token logits [t, vocab]; decoder only.
    pub fn lm_logits_graph(
        &self,
        tape: &mut Tape,
        lease: &Leased,
        seq: &[u16],
    ) -> Result<TensorId, ModelError> {
        if self.config.kind != ModelKind::Decoder {
            return Err(ModelError::WrongKind {
                expected: ModelKind::Decoder,
                found: self.config.kind,
            });
        }
        let hidden = self.hidden_graph(tape, lease, seq)?;
        let logits = tape.matmul(hidden, self.id(lease, "lm.w"))?;
        Ok(tape.add_bias(logits, self.id(lease, "lm.b"))?)
    }

    /// Score a sequence with frozen parameters on a throwaway tape.
    pub fn score(&self, seq: &[u16]) -> Result<f32, ModelError> {
        let mut tape = Tape::new();
        let lease = self.lease(&mut tape, false)?;
        let s = self.score_graph(&mut tape, &lease, seq)?;
        Ok(tape.scalar(s)?)
    }
}

/// Score with the decoder teacher; rejects other model kinds.
pub fn teacher_score(model: &ModelParams, seq: &[u16]) -> Result<f32, ModelError> {
    if model.config.kind != ModelKind::Decoder {
        return Err(ModelError::WrongKind {
            expected: ModelKind::Decoder,
            found: model.config.kind,
        });
    }
    model.score(seq)
}

/// Score with the encoder student; rejects other model kinds.
pub fn student_score(model: &ModelParams, seq: &[u16]) -> Result<f32, ModelError> {
    if model.config.kind != ModelKind::Encoder {
        return Err(ModelError::WrongKind {
            expected: ModelKind::Encoder,
            found: model.config.kind,
        });
    }
    model.score(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmodel::tokenizer::encode_pair;
    use crate::textmodel::QueryDoc;

    fn doc(q: &str, t: &str, s: &str) -> QueryDoc {
        QueryDoc {
            query: q.into(),
            title: t.into(),
            summary: s.into(),
        }
    }

    fn small_teacher() -> ModelParams {
        let config = ModelConfig {
            kind: ModelKind::Decoder,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 64,
        };
        ModelParams::init(config, &mut Prng::new(7)).unwrap()
    }

    fn small_student() -> ModelParams {
        let config = ModelConfig {
            kind: ModelKind::Encoder,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 64,
        };
        ModelParams::init(config, &mut Prng::new(7)).unwrap()
    }

    #[test]
    fn default_sizes_and_capacity_ratio() {
        let mut rng = Prng::new(1);
        let teacher = ModelParams::init(ModelConfig::teacher(), &mut rng).unwrap();
        let student = ModelParams::init(ModelConfig::student(), &mut rng).unwrap();
        let ratio = teacher.param_count() as f64 / student.param_count() as f64;
        assert!(
            ratio >= 4.0,
            "teacher {} student {} ratio {ratio:.2}",
            teacher.param_count(),
            student.param_count()
        );
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = ModelConfig::student();
        let a = ModelParams::init(config, &mut Prng::new(3)).unwrap();
        let b = ModelParams::init(config, &mut Prng::new(3)).unwrap();
        let c = ModelParams::init(config, &mut Prng::new(4)).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(x.data, y.data, "{}", x.name);
        }
        let (_, wa) = a.tensor("tok_emb").unwrap();
        let (_, wc) = c.tensor("tok_emb").unwrap();
        assert_ne!(wa, wc);
    }

    #[test]
    fn teacher_causality_prefix_scores_unchanged_by_suffix() {
        // The score pools the end token, and with causal attention nothing
        // before it can peek ahead; but hidden states of a shared prefix must
        // be bit-identical whatever follows.
        let model = small_teacher();
        let a = encode_pair(&doc("abc", "one", "first summary"), 64).unwrap();
        let b = encode_pair(&doc("abc", "one", "zzzz entirely different"), 64).unwrap();
        let shared = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
        assert!(shared >= 9, "docs share query, title, and separators");

        let mut ta = Tape::new();
        let la = model.lease(&mut ta, false).unwrap();
        let ha = model.hidden_graph(&mut ta, &la, &a).unwrap();
        let mut tb = Tape::new();
        let lb = model.lease(&mut tb, false).unwrap();
        let hb = model.hidden_graph(&mut tb, &lb, &b).unwrap();

        let d = model.config.d_model;
        assert_eq!(
            &ta.data(ha)[..shared * d],
            &tb.data(hb)[..shared * d],
            "prefix hidden states must not depend on the suffix"
        );
    }

    #[test]
    fn teacher_score_sensitive_to_query_bytes() {
        let model = small_teacher();
        let a = encode_pair(&doc("abc", "title", "summary"), 64).unwrap();
        let b = encode_pair(&doc("xbc", "title", "summary"), 64).unwrap();
        let sa = teacher_score(&model, &a).unwrap();
        let sb = teacher_score(&model, &b).unwrap();
        assert_ne!(sa, sb);
    }

    #[test]
    fn student_sees_whole_sequence_from_first_position() {
        // Bidirectional pooling at position 0 must react to a change at the
        // far end of the sequence.
        let model = small_student();
        let a = encode_pair(&doc("abc", "title", "summary one"), 64).unwrap();
        let b = encode_pair(&doc("abc", "title", "summary two"), 64).unwrap();
        let sa = student_score(&model, &a).unwrap();
        let sb = student_score(&model, &b).unwrap();
        assert_ne!(sa, sb);
    }

    #[test]
    fn decoder_requires_end_token() {
        let model = small_teacher();
        let mut seq = encode_pair(&doc("abc", "t", "s"), 64).unwrap();
        seq.pop();
        assert!(matches!(model.score(&seq), Err(ModelError::MissingEnd)));
    }

    #[test]
    fn encoder_requires_start_token() {
        let model = small_student();
        let seq = encode_pair(&doc("abc", "t", "s"), 64).unwrap();
        assert!(matches!(
            model.score(&seq[1..]),
            Err(ModelError::MissingStart)
        ));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let teacher = small_teacher();
        let student = small_student();
        let seq = encode_pair(&doc("abc", "t", "s"), 64).unwrap();
        assert!(matches!(
            student_score(&teacher, &seq),
            Err(ModelError::WrongKind { .. })
        ));
        assert!(matches!(
            teacher_score(&student, &seq),
            Err(ModelError::WrongKind { .. })
        ));
    }

    #[test]
    fn sequence_longer_than_max_rejected() {
        // Built by hand since encode_pair would refuse to overflow max_len.
        let model = small_teacher();
        let seq: Vec<u16> = std::iter::once(START)
            .chain((0..70).map(|_| b'a' as u16))
            .chain([END])
            .collect();
        assert!(matches!(
            model.score(&seq),
            Err(ModelError::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn lease_absorb_round_trips() {
        let mut model = small_student();
        let before: Vec<Vec<f32>> = model.tensors().iter().map(|t| t.data.clone()).collect();
        let mut tape = Tape::new();
        let lease = model.lease(&mut tape, true).unwrap();
        model.absorb(&tape, &lease);
        for (t, b) in model.tensors().iter().zip(&before) {
            assert_eq!(&t.data, b);
        }
    }

    #[test]
    fn frozen_model_scores_concurrently() {
        // Frozen parameters are shared read-only across threads; scores must
        // match the sequential result exactly.
        let model = std::sync::Arc::new(small_teacher());
        let docs: Vec<QueryDoc> = (0..8)
            .map(|i| doc(&format!("query {i}"), "title", "summary text"))
            .collect();
        let sequential: Vec<f32> = docs
            .iter()
            .map(|d| teacher_score(&model, &encode_pair(d, 64).unwrap()).unwrap())
            .collect();
        let handles: Vec<_> = docs
            .iter()
            .map(|d| {
                let m = model.clone();
                let seq = encode_pair(d, 64).unwrap();
                std::thread::spawn(move || teacher_score(&m, &seq).unwrap())
            })
            .collect();
        let threaded: Vec<f32> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(sequential, threaded);
    }
}
