//! The binding-window fusion model.
//!
//! Per-modality feature extractors (weights shared across the K temporal
//! segments) feed a mid-level fusion block producing one fused vector per
//! binding window; two affine heads predict verb and noun classes from each
//! fused vector, and per-window logits are averaged into the video-level
//! prediction before the loss.

mod check;
mod eval;
mod train;

pub use check::{gradcheck_suite, CheckOutcome, GRADCHECK_TOL, GRADCHECK_TOL_LINEAR};
pub use eval::{
    ensemble_scores, per_class_verb_accuracy, predict_scores, sweep_to_csv, sweep_widths,
    verb_top1, EvalOptions, ScoreMode, SweepPoint,
};
pub use train::{logs_to_csv, train, EpochLog, Hyperparams};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_pool_patches, window_spectrogram, SPEC_BINS};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::checkpoint;
use crate::dataset::{Dataset, LoadedSegment, StreamData};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::sampler::{ModalityKind, ModalitySpec, SamplePos, SampleTuple, TbwConfig};
use crate::tensor::{Scalar, Tensor};

/// Mid-level fusion strategy.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// One affine layer over the concatenated modality features.
    Concat,
    /// Concatenation fusion recalibrated by a learned self-gate.
    ContextGate,
    /// Per-modality branches mixed by gates computed from all modalities.
    Gating,
}

/// One modality as the model sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelModality {
    pub id: String,
    pub kind: ModalityKind,
    pub rate: f64,
    /// Extractor input width: the frame dim for vector streams, the pooled
    /// spectrogram length for audio.
    pub input_dim: usize,
}

/// Binding-window settings carried by the model.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub struct TbwSettings {
    pub segments: usize,
    pub width_rel: f64,
    pub test_anchors: usize,
}

impl Default for TbwSettings {
    fn default() -> Self {
        TbwSettings { segments: 3, width_rel: 1.0, test_anchors: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modalities: Vec<ModelModality>,
    /// Extractor output width D.
    pub feature_dim: usize,
    /// Extractor hidden width.
    pub hidden_dim: usize,
    /// Fused representation width, identical across strategies.
    pub fused_dim: usize,
    pub fusion: FusionKind,
    pub verb_classes: usize,
    pub noun_classes: usize,
    pub dropout: f64,
    /// Patch size for mean-pooling spectrograms into extractor inputs.
    pub audio_pool: usize,
    pub tbw: TbwSettings,
}

impl ModelConfig {
    /// Extractor input width implied by the audio pooling patch size.
    pub fn audio_input_dim(pool: usize) -> usize {
        let side = SPEC_BINS / pool;
        side * side
    }

    /// Builds a config for a loaded dataset, reading input widths from the
    /// streams.
    pub fn for_dataset(data: &Dataset, fusion: FusionKind) -> Result<ModelConfig> {
        let audio_pool = 4;
        let mut modalities = Vec::with_capacity(data.specs.len());
        for (spec, stream) in data.specs.iter().zip(
            data.segments
                .first()
                .map(|s| s.streams.as_slice())
                .unwrap_or(&[]),
        ) {
            let input_dim = match stream {
                StreamData::Frames { dim, .. } => *dim,
                StreamData::Audio(_) => Self::audio_input_dim(audio_pool),
            };
            modalities.push(ModelModality {
                id: spec.id.clone(),
                kind: spec.kind,
                rate: spec.rate,
                input_dim,
            });
        }
        Ok(ModelConfig {
            modalities,
            feature_dim: 64,
            hidden_dim: 64,
            fused_dim: 512,
            fusion,
            verb_classes: data.verb_classes,
            noun_classes: data.noun_classes,
            dropout: 0.5,
            audio_pool,
            tbw: TbwSettings::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("model needs at least one modality".into()));
        }
        for m in &self.modalities {
            if m.input_dim == 0 {
                return Err(Error::Config(format!("modality {:?} input_dim is 0", m.id)));
            }
            if m.rate <= 0.0 {
                return Err(Error::Config(format!("modality {:?} rate must be > 0", m.id)));
            }
            if m.kind == ModalityKind::AudioWaveform
                && m.input_dim != Self::audio_input_dim(self.audio_pool)
            {
                return Err(Error::Config(format!(
                    "audio modality {:?} input_dim {} does not match pool {}",
                    m.id, m.input_dim, self.audio_pool
                )));
            }
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.fused_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.verb_classes == 0 || self.noun_classes == 0 {
            return Err(Error::Config("class counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.audio_pool == 0 || SPEC_BINS % self.audio_pool != 0 {
            return Err(Error::Config(format!(
                "audio pool {} must divide {SPEC_BINS}",
                self.audio_pool
            )));
        }
        if self.tbw.segments == 0 || self.tbw.test_anchors == 0 || self.tbw.width_rel < 0.0 {
            return Err(Error::Config("invalid binding-window settings".into()));
        }
        Ok(())
    }

    pub fn modality_specs(&self) -> Vec<ModalitySpec> {
        self.modalities
            .iter()
            .map(|m| ModalitySpec::new(m.id.clone(), m.rate, m.kind))
            .collect()
    }

    /// Sampler settings for the given mode.
    pub fn tbw_config(&self, mode: crate::sampler::SamplingMode) -> TbwConfig {
        TbwConfig {
            segments: self.tbw.segments,
            width_rel: self.tbw.width_rel,
            mode,
            test_anchors: self.tbw.test_anchors,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct AffineIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct MlpIds {
    l1: AffineIds,
    l2: AffineIds,
}

#[derive(Debug, Clone)]
enum FusionIds {
    Concat(AffineIds),
    ContextGate { base: AffineIds, gate: AffineIds },
    Gating { branches: Vec<AffineIds>, gates: Vec<AffineIds> },
}

/// The trainable model: configuration plus its parameter store.
#[derive(Debug, Clone)]
pub struct TbnModel<E: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<E>,
    extractors: Vec<MlpIds>,
    fusion: FusionIds,
    verb_head: AffineIds,
    noun_head: AffineIds,
}

impl<E: Scalar> TbnModel<E> {
    /// Builds a freshly initialized model. Weights are uniform in
    /// `+-1/sqrt(fan_in)` from the `init` sub-stream of `seed`; biases start
    /// at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = derive_rng(seed, "init", &[]);
        let affine = |store: &mut ParamStore<E>, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (d_in as f64).sqrt();
            let w = Tensor::from_fn(&[d_in, d_out], |_| E::from_f64(rng.gen_range(-bound..bound)));
            AffineIds {
                w: store.register(format!("{name}.w"), w),
                b: store.register(format!("{name}.b"), Tensor::zeros(&[d_out])),
            }
        };

        let mut extractors = Vec::with_capacity(config.modalities.len());
        for m in &config.modalities {
            let l1 = affine(&mut store, &format!("ext.{}.1", m.id), m.input_dim, config.hidden_dim, &mut rng);
            let l2 = affine(&mut store, &format!("ext.{}.2", m.id), config.hidden_dim, config.feature_dim, &mut rng);
            extractors.push(MlpIds { l1, l2 });
        }

        let concat_dim = config.feature_dim * config.modalities.len();
        let fusion = match config.fusion {
            FusionKind::Concat => {
                FusionIds::Concat(affine(&mut store, "fusion", concat_dim, config.fused_dim, &mut rng))
            }
            FusionKind::ContextGate => FusionIds::ContextGate {
                base: affine(&mut store, "fusion", concat_dim, config.fused_dim, &mut rng),
                gate: affine(&mut store, "fusion.gate", config.fused_dim, config.fused_dim, &mut rng),
            },
            FusionKind::Gating => {
                let mut branches = Vec::new();
                let mut gates = Vec::new();
                for m in &config.modalities {
                    branches.push(affine(
                        &mut store,
                        &format!("fusion.branch.{}", m.id),
                        config.feature_dim,
                        config.fused_dim,
                        &mut rng,
                    ));
                }
                for m in &config.modalities {
                    gates.push(affine(
                        &mut store,
                        &format!("fusion.gate.{}", m.id),
                        concat_dim,
                        config.fused_dim,
                        &mut rng,
                    ));
                }
                FusionIds::Gating { branches, gates }
            }
        };
        let verb_head = affine(&mut store, "head.verb", config.fused_dim, config.verb_classes, &mut rng);
        let noun_head = affine(&mut store, "head.noun", config.fused_dim, config.noun_classes, &mut rng);

        Ok(TbnModel { config, store, extractors, fusion, verb_head, noun_head })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let header = serde_json::to_string(&self.config)
            .map_err(|e| Error::Format(format!("serializing model config: {e}")))?;
        checkpoint::save(path, &header, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = checkpoint::load::<E>(path)?;
        let config: ModelConfig = serde_json::from_str(&ckpt.header)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut model = TbnModel::new(config, 0)?;
        checkpoint::restore_into(&ckpt, &mut model.store)?;
        Ok(model)
    }

    /// Confirms the dataset carries exactly the streams this model expects.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.specs.len() != self.config.modalities.len() {
            return Err(Error::Config(format!(
                "model wants {} modalities, dataset provides {}",
                self.config.modalities.len(),
                data.specs.len()
            )));
        }
        for (spec, m) in data.specs.iter().zip(&self.config.modalities) {
            if spec.id != m.id || spec.kind != m.kind || (spec.rate - m.rate).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "modality mismatch: model {:?} vs dataset {:?}",
                    m.id, spec.id
                )));
            }
        }
        if data.verb_classes != self.config.verb_classes
            || data.noun_classes != self.config.noun_classes
        {
            return Err(Error::Config(format!(
                "class counts differ: model ({}, {}) vs dataset ({}, {})",
                self.config.verb_classes,
                self.config.noun_classes,
                data.verb_classes,
                data.noun_classes
            )));
        }
        for seg in data.segments.iter().take(1) {
            for (stream, m) in seg.streams.iter().zip(&self.config.modalities) {
                if let StreamData::Frames { dim, .. } = stream {
                    if *dim != m.input_dim {
                        return Err(Error::Config(format!(
                            "modality {:?}: stream dim {} vs model input {}",
                            m.id, dim, m.input_dim
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Extractor input rows for modality `m`, one row per (segment, tuple).
    fn gather_input(
        &self,
        m: usize,
        items: &[(&LoadedSegment, &SampleTuple)],
    ) -> Result<Tensor<E>> {
        let dim = self.config.modalities[m].input_dim;
        let mut data = Vec::with_capacity(items.len() * dim);
        for (segment, tuple) in items {
            let stream = &segment.streams[m];
            match (&tuple.positions[m].pos, stream) {
                (SamplePos::Frame(idx), StreamData::Frames { data: frames, dim: d, .. }) => {
                    if *d != dim {
                        return Err(Error::ShapeMismatch(format!(
                            "stream dim {d} vs model input {dim}"
                        )));
                    }
                    data.extend(frames[idx * d..(idx + 1) * d].iter().map(|&v| E::from_f64(f64::from(v))));
                }
                (SamplePos::Time(t), StreamData::Audio(wave)) => {
                    let spec = window_spectrogram(wave, *t)?;
                    let pooled = mean_pool_patches(&spec, self.config.audio_pool)?;
                    if pooled.len() != dim {
                        return Err(Error::ShapeMismatch(format!(
                            "pooled spectrogram {} vs model input {dim}",
                            pooled.len()
                        )));
                    }
                    data.extend(pooled.iter().map(|&v| E::from_f64(f64::from(v))));
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "sample position does not match stream kind for modality {m}"
                    )))
                }
            }
        }
        Tensor::new(vec![items.len(), dim], data)
    }

    /// Records the forward pass for a batch: every segment contributes the
    /// same number of binding windows, each producing one (verb, noun) logit
    /// pair; the pairs are averaged into video-level logits.
    fn forward_batch(
        &self,
        tape: &mut Tape<E>,
        batch: &[&LoadedSegment],
        tuples: &[Vec<SampleTuple>],
        train: bool,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<BatchLogits> {
        if batch.is_empty() || batch.len() != tuples.len() {
            return Err(Error::InvalidArgument("empty or mismatched batch".into()));
        }
        let k = tuples[0].len();
        if k == 0 || tuples.iter().any(|t| t.len() != k) {
            return Err(Error::InvalidArgument(
                "every segment must contribute the same positive number of windows".into(),
            ));
        }

        // One tape leaf per parameter, shared by all K windows.
        let params = TapeParams::bind(tape, self)?;
        let mut verb_parts = Vec::with_capacity(k);
        let mut noun_parts = Vec::with_capacity(k);
        for slot in 0..k {
            let mut feats = Vec::with_capacity(self.config.modalities.len());
            for m in 0..self.config.modalities.len() {
                let items: Vec<(&LoadedSegment, &SampleTuple)> = batch
                    .iter()
                    .zip(tuples)
                    .map(|(&seg, t)| (seg, &t[slot]))
                    .collect();
                let input = tape.leaf(self.gather_input(m, &items)?);
                feats.push(params.extract(tape, m, input)?);
            }
            let fused = params.fuse(tape, &feats)?;
            let fused = tape.dropout(fused, self.config.dropout, train, dropout_rng)?;
            verb_parts.push(tape.affine(fused, params.verb_head.0, params.verb_head.1)?);
            noun_parts.push(tape.affine(fused, params.noun_head.0, params.noun_head.1)?);
        }
        Ok(BatchLogits {
            verb_agg: tape.mean_of(&verb_parts)?,
            noun_agg: tape.mean_of(&noun_parts)?,
            verb_parts,
            noun_parts,
        })
    }

    /// Training loss for a batch of segments with pre-sampled windows:
    /// softmax cross-entropy of the aggregated verb logits plus the same for
    /// nouns. Returns the loss var and the tape for backward.
    pub fn forward_loss(
        &self,
        batch: &[&LoadedSegment],
        tuples: &[Vec<SampleTuple>],
        train: bool,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<(Tape<E>, Var, BatchLogits)> {
        let mut tape = Tape::new();
        let logits = self.forward_batch(&mut tape, batch, tuples, train, dropout_rng)?;
        let verbs: Vec<usize> = batch.iter().map(|s| s.segment.verb_class).collect();
        let nouns: Vec<usize> = batch.iter().map(|s| s.segment.noun_class).collect();
        let verb_loss = tape.softmax_xent(logits.verb_agg, &verbs)?;
        let noun_loss = tape.softmax_xent(logits.noun_agg, &nouns)?;
        let loss = tape.add(verb_loss, noun_loss)?;
        Ok((tape, loss, logits))
    }

    /// Eval-mode logits for a batch (no dropout, no gradients). Returns the
    /// per-window and aggregated logits as plain tensors.
    pub fn eval_batch(
        &self,
        batch: &[&LoadedSegment],
        tuples: &[Vec<SampleTuple>],
    ) -> Result<EvalLogits<E>> {
        let mut tape = Tape::new();
        let mut rng = derive_rng(0, "unused-eval-dropout", &[]);
        let logits = self.forward_batch(&mut tape, batch, tuples, false, &mut rng)?;
        Ok(EvalLogits {
            verb_parts: logits.verb_parts.iter().map(|&v| tape.value(v).clone()).collect(),
            noun_parts: logits.noun_parts.iter().map(|&v| tape.value(v).clone()).collect(),
            verb_agg: tape.value(logits.verb_agg).clone(),
            noun_agg: tape.value(logits.noun_agg).clone(),
        })
    }

    /// Feature vector(s) for modality `m` from raw extractor input rows
    /// (eval mode). Deterministic: the same samples give the same features
    /// for every segment slot because the weights are shared.
    pub fn extract_features(&self, m: usize, input: Tensor<E>) -> Result<Tensor<E>> {
        if m >= self.config.modalities.len() {
            return Err(Error::InvalidArgument(format!("no modality {m}")));
        }
        let mut tape = Tape::new();
        let params = TapeParams::bind(&mut tape, self)?;
        let x = tape.leaf(input);
        let out = params.extract(&mut tape, m, x)?;
        Ok(tape.value(out).clone())
    }

    /// Fused representation of per-modality feature rows (eval mode). The
    /// output width equals `fused_dim` for every strategy.
    pub fn fuse_features(&self, features: &[Tensor<E>]) -> Result<Tensor<E>> {
        if features.len() != self.config.modalities.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature blocks for {} modalities",
                features.len(),
                self.config.modalities.len()
            )));
        }
        let mut tape = Tape::new();
        let params = TapeParams::bind(&mut tape, self)?;
        let vars: Vec<Var> = features.iter().map(|f| tape.leaf(f.clone())).collect();
        let out = params.fuse(&mut tape, &vars)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape handles for one forward pass.
struct TapeParams {
    extractors: Vec<((Var, Var), (Var, Var))>,
    fusion: FusionVars,
    verb_head: (Var, Var),
    noun_head: (Var, Var),
}

enum FusionVars {
    Concat((Var, Var)),
    ContextGate { base: (Var, Var), gate: (Var, Var) },
    Gating { branches: Vec<(Var, Var)>, gates: Vec<(Var, Var)> },
}

impl TapeParams {
    fn bind<E: Scalar>(tape: &mut Tape<E>, model: &TbnModel<E>) -> Result<TapeParams> {
        let bind_affine = |tape: &mut Tape<E>, ids: &AffineIds| {
            (tape.param(&model.store, ids.w), tape.param(&model.store, ids.b))
        };
        let extractors = model
            .extractors
            .iter()
            .map(|mlp| (bind_affine(tape, &mlp.l1), bind_affine(tape, &mlp.l2)))
            .collect();
        let fusion = match &model.fusion {
            FusionIds::Concat(ids) => FusionVars::Concat(bind_affine(tape, ids)),
            FusionIds::ContextGate { base, gate } => FusionVars::ContextGate {
                base: bind_affine(tape, base),
                gate: bind_affine(tape, gate),
            },
            FusionIds::Gating { branches, gates } => FusionVars::Gating {
                branches: branches.iter().map(|b| bind_affine(tape, b)).collect(),
                gates: gates.iter().map(|g| bind_affine(tape, g)).collect(),
            },
        };
        Ok(TapeParams {
            extractors,
            fusion,
            verb_head: bind_affine(tape, &model.verb_head),
            noun_head: bind_affine(tape, &model.noun_head),
        })
    }

    fn extract<E: Scalar>(&self, tape: &mut Tape<E>, m: usize, input: Var) -> Result<Var> {
        let ((w1, b1), (w2, b2)) = self.extractors[m];
        let h = tape.affine(input, w1, b1)?;
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }

    fn fuse<E: Scalar>(&self, tape: &mut Tape<E>, feats: &[Var]) -> Result<Var> {
        match &self.fusion {
            FusionVars::Concat((w, b)) => {
                let cat = tape.concat(feats)?;
                let h = tape.affine(cat, *w, *b)?;
                Ok(tape.relu(h))
            }
            FusionVars::ContextGate { base, gate } => {
                let cat = tape.concat(feats)?;
                let h = tape.affine(cat, base.0, base.1)?;
                let h = tape.relu(h);
                let z = tape.affine(h, gate.0, gate.1)?;
                let z = tape.sigmoid(z);
                tape.mul(z, h)
            }
            FusionVars::Gating { branches, gates } => {
                let cat = tape.concat(feats)?;
                let mut acc: Option<Var> = None;
                for ((feat, branch), gate) in feats.iter().zip(branches).zip(gates) {
                    let h = tape.affine(*feat, branch.0, branch.1)?;
                    let h = tape.relu(h);
                    let z = tape.affine(cat, gate.0, gate.1)?;
                    let z = tape.sigmoid(z);
                    let gated = tape.mul(z, h)?;
                    acc = Some(match acc {
                        None => gated,
                        Some(prev) => tape.add(prev, gated)?,
                    });
                }
                acc.ok_or_else(|| Error::InvalidArgument("gating fusion without modalities".into()))
            }
        }
    }
}

/// Logit handles from one recorded batch.
pub struct BatchLogits {
    pub verb_parts: Vec<Var>,
    pub noun_parts: Vec<Var>,
    pub verb_agg: Var,
    pub noun_agg: Var,
}

/// Materialized eval-mode logits.
pub struct EvalLogits<E: Scalar> {
    pub verb_parts: Vec<Tensor<E>>,
    pub noun_parts: Vec<Tensor<E>>,
    pub verb_agg: Tensor<E>,
    pub noun_agg: Tensor<E>,
}
