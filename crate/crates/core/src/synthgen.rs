//! Controllable synthetic multimodal datasets.
//!
//! Each sample is an action segment whose class evidence is injected into the
//! modality streams at configurable temporal offsets: modality `i` receives
//! its evidence at `t0 + (i - (M-1)/2) * offset_frac * T`, so consecutive
//! modalities are separated by exactly `offset_frac * T` seconds. Streams are
//! Gaussian noise plus orthogonal template vectors (or tone chords for
//! waveform modalities), with optional class-irrelevant distractor events.
//!
//! Two evidence schemes are provided:
//!
//! - `pair-code`: the class id splits into a *marginal* part, shown
//!   identically by every informative modality at the offset event times,
//!   and a *pair-coded* residue carried by a dense train of short key
//!   cells: within each cell a fresh uniform key rotates the residue
//!   through a template alphabet, and each modality reads the cell at its
//!   own temporal offset. A single modality's pair template is therefore
//!   uniform (no label information), and two modalities reveal the residue
//!   only when sampled at a relative delay matching their offset — which a
//!   synchronous alignment never does, because the cells are shorter than
//!   the offset. Single-modality and synchronous classifiers are capped at
//!   the marginal ceiling; only models that bind modalities across temporal
//!   offsets can beat it, making binding-window effects measurable.
//! - `per-modality`: every informative modality carries the class template
//!   directly; a single modality suffices. Useful as a sanity floor and for
//!   modality-dominance analyses.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, TARGET_RATE};
use crate::dataset::{
    write_json, write_manifest, write_stream, DatasetMeta, ManifestRecord, StreamSidecar,
};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::sampler::{ModalityKind, ModalitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub id: String,
    pub rate: f64,
    pub kind: ModalityKind,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceScheme {
    PairCode,
    PerModality,
}

/// Generator settings. Defaults give the standard desk-scale benchmark:
/// 8 classes, three vector modalities at deliberately unequal rates, and
/// evidence offsets at 15% of the segment duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    /// Segment duration T in seconds.
    pub duration: f64,
    pub modalities: Vec<SynthModality>,
    /// Vector width of frame modalities.
    pub frame_dim: usize,
    /// Temporal separation between consecutive modalities' evidence, as a
    /// fraction of T.
    pub offset_frac: f64,
    /// Evidence event width in seconds.
    pub evidence_width: f64,
    pub noise_sigma: f64,
    pub evidence_scheme: EvidenceScheme,
    /// Pair-code only: number of marginal template groups. The class id is
    /// `marginal + marginal_classes * residue`; the marginal part is visible
    /// to every informative modality and caps single-modality accuracy at
    /// `marginal_classes / n_classes`, while the residue needs a modality
    /// pair.
    pub marginal_classes: usize,
    /// Evidence repetitions per sample. Base times are spaced so that no
    /// repetition pair lands on a multiple of the modality offset, keeping
    /// synchronous alignment blind while multiplying binding opportunities.
    /// Repetitions that do not fit the duration are dropped.
    pub events_per_sample: usize,
    /// Pair-code only: length in seconds of one key cell. Must stay shorter
    /// than the modality offset `offset_frac * duration`, otherwise
    /// synchronously aligned samples could land in the same cell and read
    /// the residue.
    pub pair_key_cell: f64,
    /// Per-class list of informative modality indices; `None` means every
    /// modality carries evidence for every class.
    pub informative: Option<Vec<Vec<usize>>>,
    /// Poisson rate (events per second) of class-irrelevant template events.
    pub distractor_rate: f64,
    /// Modality receiving distractors; defaults to the last one.
    pub distractor_modality: Option<usize>,
    /// Noun label space for multi-task stress tests; `None` reuses the verb
    /// class as the noun.
    pub noun_classes: Option<usize>,
    /// Evidence amplitude relative to unit-norm templates.
    pub template_gain: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 8,
            samples_per_class: 200,
            test_samples_per_class: 50,
            duration: 4.0,
            modalities: vec![
                SynthModality { id: "rgb".into(), rate: 60.0, kind: ModalityKind::VectorFrame },
                SynthModality { id: "flow".into(), rate: 30.0, kind: ModalityKind::VectorFrame },
                SynthModality { id: "aud".into(), rate: 75.0, kind: ModalityKind::VectorFrame },
            ],
            frame_dim: 16,
            offset_frac: 0.15,
            evidence_width: 0.5,
            noise_sigma: 0.2,
            evidence_scheme: EvidenceScheme::PairCode,
            marginal_classes: 4,
            events_per_sample: 2,
            pair_key_cell: 0.55,
            informative: None,
            distractor_rate: 0.0,
            distractor_modality: None,
            noun_classes: None,
            template_gain: 1.5,
        }
    }
}

/// Where each template family lives inside the combined [`templates`] list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLayout {
    pub verb_marginal: std::ops::Range<usize>,
    pub verb_pair: std::ops::Range<usize>,
    pub noun_marginal: std::ops::Range<usize>,
    pub noun_pair: std::ops::Range<usize>,
}

impl TemplateLayout {
    pub fn total(&self) -> usize {
        self.noun_pair.end
    }
}

/// Per-task split of a class id under the pair-code scheme.
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub struct CodePlan {
    /// Marginal template groups (class % marginal_count).
    pub marginal_count: usize,
    /// Distinct residues (class / marginal_count) the pair code must carry.
    pub residue_count: usize,
    /// Pair template alphabet; the residue is recoverable from any two
    /// modality ranks because every rank stride is invertible modulo the
    /// alphabet. 0 when nothing is left to encode.
    pub alphabet: usize,
}

impl SynthSpec {
    pub fn noun_class_count(&self) -> usize {
        self.noun_classes.unwrap_or(self.n_classes)
    }

    /// How `classes` ids split into marginal and pair-coded parts. The pair
    /// alphabet is the first size that fits every residue and keeps the
    /// modality-rank strides invertible (coprime with 1..M).
    pub fn code_plan(&self, classes: usize) -> CodePlan {
        let marginal_count = self.marginal_classes.clamp(1, classes.max(1));
        let residue_count = classes.div_ceil(marginal_count);
        let alphabet = if residue_count <= 1 {
            0
        } else {
            let m = self.modalities.len().max(1);
            let mut size = residue_count.max(2);
            while (1..m).any(|d| gcd(size, d) != 1) {
                size += 1;
            }
            size
        };
        CodePlan { marginal_count, residue_count, alphabet }
    }

    /// Layout of the combined orthogonal template list.
    pub fn template_layout(&self) -> TemplateLayout {
        let (verb_m, verb_p) = match self.evidence_scheme {
            EvidenceScheme::PerModality => (self.n_classes, 0),
            EvidenceScheme::PairCode => {
                let plan = self.code_plan(self.n_classes);
                (plan.marginal_count, plan.alphabet)
            }
        };
        let (noun_m, noun_p) = match (self.noun_classes, self.evidence_scheme) {
            (None, _) => (0, 0),
            (Some(nn), EvidenceScheme::PerModality) => (nn, 0),
            (Some(nn), EvidenceScheme::PairCode) => {
                let plan = self.code_plan(nn);
                (plan.marginal_count, plan.alphabet)
            }
        };
        let verb_marginal = 0..verb_m;
        let verb_pair = verb_m..verb_m + verb_p;
        let noun_marginal = verb_pair.end..verb_pair.end + noun_m;
        let noun_pair = noun_marginal.end..noun_marginal.end + noun_p;
        TemplateLayout { verb_marginal, verb_pair, noun_marginal, noun_pair }
    }

    fn informative_for(&self, class: usize) -> Vec<usize> {
        match &self.informative {
            None => (0..self.modalities.len()).collect(),
            Some(map) => map[class].clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "need at least one class and one sample per class".into(),
            ));
        }
        if self.duration <= 0.0 || !self.duration.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidArgument("at least one modality required".into()));
        }
        for m in &self.modalities {
            if m.rate <= 0.0 || !m.rate.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "modality {:?} rate {} must be positive",
                    m.id, m.rate
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.offset_frac) {
            return Err(Error::InvalidArgument(format!(
                "offset fraction {} outside [0, 1]",
                self.offset_frac
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        if self.evidence_width <= 0.0 || self.evidence_width > self.duration {
            return Err(Error::InvalidArgument(format!(
                "evidence width {} must lie in (0, duration]",
                self.evidence_width
            )));
        }
        if self.distractor_rate < 0.0 {
            return Err(Error::InvalidArgument("distractor rate must be >= 0".into()));
        }
        if let Some(m) = self.distractor_modality {
            if m >= self.modalities.len() {
                return Err(Error::InvalidArgument(format!(
                    "distractor modality {m} out of range"
                )));
            }
        }
        if let Some(map) = &self.informative {
            if map.len() != self.n_classes {
                return Err(Error::InvalidArgument(
                    "informative map must list every class".into(),
                ));
            }
            for (class, mods) in map.iter().enumerate() {
                if mods.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "class {class} has no informative modality"
                    )));
                }
                if mods.iter().any(|&m| m >= self.modalities.len()) {
                    return Err(Error::InvalidArgument(format!(
                        "class {class} names an unknown modality"
                    )));
                }
            }
        }
        if self.marginal_classes == 0 {
            return Err(Error::InvalidArgument("marginal_classes must be >= 1".into()));
        }
        if self.events_per_sample == 0 {
            return Err(Error::InvalidArgument("events_per_sample must be >= 1".into()));
        }
        if self.pair_key_cell <= 0.0 || !self.pair_key_cell.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pair_key_cell {} must be positive",
                self.pair_key_cell
            )));
        }
        let layout = self.template_layout();
        if layout.total() > self.frame_dim {
            return Err(Error::InvalidArgument(format!(
                "frame_dim {} too small for {} orthogonal templates",
                self.frame_dim,
                layout.total()
            )));
        }
        if self
            .modalities
            .iter()
            .any(|m| m.kind == ModalityKind::AudioWaveform)
        {
            let top = signature_frequency(layout.total());
            if 2.0 * top >= f64::from(TARGET_RATE) / 2.0 {
                return Err(Error::InvalidArgument(format!(
                    "{} templates push tone chords past the Nyquist limit",
                    layout.total()
                )));
            }
        }
        Ok(())
    }

    pub fn modality_specs(&self) -> Vec<ModalitySpec> {
        self.modalities
            .iter()
            .map(|m| ModalitySpec::new(m.id.clone(), m.rate, m.kind))
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Paths produced by [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub root: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Unit-norm mutually orthogonal template vectors, deterministic in
/// `(spec, seed)`, arranged per [`SynthSpec::template_layout`].
pub fn templates(spec: &SynthSpec, seed: u64) -> Result<Vec<Vec<f32>>> {
    spec.validate()?;
    let count = spec.template_layout().total();
    let mut rng = derive_rng(seed, "templates", &[]);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let dim = spec.frame_dim;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    Ok(basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x as f32).collect())
        .collect())
}

/// Class-specific tone chord: a fundamental at `1000 + 200 * class` Hz plus
/// a quieter octave, 24 kHz mono.
pub fn render_audio_signature(class: usize, duration: f64) -> Result<Waveform> {
    if duration <= 0.0 || !duration.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "signature duration {duration} must be positive"
        )));
    }
    let f0 = signature_frequency(class);
    let len = (duration * f64::from(TARGET_RATE)).round() as usize;
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / f64::from(TARGET_RATE);
            (0.5 * (2.0 * PI * f0 * t).sin() + 0.2 * (4.0 * PI * f0 * t).sin()) as f32
        })
        .collect();
    Ok(Waveform::mono(samples, TARGET_RATE))
}

fn signature_frequency(class: usize) -> f64 {
    1000.0 + 200.0 * class as f64
}

/// Writes the full dataset (streams, manifests, metadata) under `out_dir`.
/// Byte-identical for identical `(spec, seed)`.
pub fn generate_dataset(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<DatasetPaths> {
    spec.validate()?;
    let streams_dir = out_dir.join("streams");
    fs::create_dir_all(&streams_dir).map_err(|e| Error::io(&streams_dir, e))?;

    let all_templates = templates(spec, seed)?;

    let mut train_records = Vec::new();
    let mut test_records = Vec::new();
    for (split, count, records) in [
        (0u64, spec.samples_per_class * spec.n_classes, &mut train_records),
        (1u64, spec.test_samples_per_class * spec.n_classes, &mut test_records),
    ] {
        for s in 0..count {
            let video_id = format!("{}{s:05}", if split == 0 { "tr" } else { "te" });
            let rec = generate_sample(spec, seed, split, s, &video_id, &all_templates, out_dir)?;
            records.push(rec);
        }
    }

    let train_manifest = out_dir.join("train.jsonl");
    let test_manifest = out_dir.join("test.jsonl");
    write_manifest(&train_manifest, &train_records)?;
    write_manifest(&test_manifest, &test_records)?;
    let meta = DatasetMeta {
        modalities: spec.modality_specs(),
        verb_classes: spec.n_classes,
        noun_classes: spec.noun_class_count(),
    };
    write_json(&out_dir.join("dataset.json"), &meta)?;
    #[derive(Serialize)]
    struct SpecEcho<'s> {
        seed: u64,
        spec: &'s SynthSpec,
    }
    write_json(&out_dir.join("synth_spec.json"), &SpecEcho { seed, spec })?;
    Ok(DatasetPaths { root: out_dir.to_path_buf(), train_manifest, test_manifest })
}

/// Marginal template index shown at the offset event times: the class
/// template under `per-modality`, the class's marginal group under the pair
/// code (the residue travels in the key field instead).
fn marginal_index(
    scheme: EvidenceScheme,
    marginal: &std::ops::Range<usize>,
    plan: CodePlan,
    class: usize,
) -> usize {
    match scheme {
        EvidenceScheme::PerModality => marginal.start + class,
        EvidenceScheme::PairCode => marginal.start + class % plan.marginal_count,
    }
}

/// A dense train of pair-code key cells. `keys[c]` is the uniform key of
/// cell `c`; the template a modality shows at field coordinate `u` is
/// `(key + rank * residue) % alphabet`, so one modality alone is uniform
/// while two modalities reading the *same cell* (delay matching their
/// offset difference) reveal the residue.
#[derive(Debug, Clone)]
struct PairField {
    u_min: f64,
    cell: f64,
    keys: Vec<usize>,
    alphabet: usize,
    /// First template index of this field's family.
    base: usize,
}

impl PairField {
    fn template_at(&self, u: f64, rank: usize, residue: usize) -> usize {
        let raw = ((u - self.u_min) / self.cell).floor() as i64;
        let c = raw.clamp(0, self.keys.len() as i64 - 1) as usize;
        self.base + (self.keys[c] + rank * residue) % self.alphabet
    }
}

/// One field as seen by one modality.
struct ActiveField<'a> {
    field: &'a PairField,
    rank: usize,
    residue: usize,
    /// The modality's temporal offset; the field is read at `t - offset`.
    offset: f64,
}

fn generate_sample(
    spec: &SynthSpec,
    seed: u64,
    split: u64,
    index: usize,
    video_id: &str,
    all_templates: &[Vec<f32>],
    out_dir: &Path,
) -> Result<ManifestRecord> {
    let mut rng = derive_rng(seed, "datagen", &[split, index as u64]);
    let t = spec.duration;
    let m = spec.modalities.len();
    let verb = index % spec.n_classes;
    let noun = match spec.noun_classes {
        None => verb,
        Some(nn) => rng.gen_range(0..nn),
    };
    let informative = spec.informative_for(verb);
    let layout = spec.template_layout();
    let verb_plan = spec.code_plan(spec.n_classes);
    let noun_plan = spec.code_plan(spec.noun_class_count());

    // Base event times, kept away from the edges when the offsets allow it.
    // Repetitions sit on a grid whose gap clears every offset multiple by at
    // least the event width, so no two repetitions can bring two modalities'
    // evidence into synchronous alignment.
    let half_span = (m as f64 - 1.0) / 2.0 * spec.offset_frac * t;
    let half_w = spec.evidence_width / 2.0;
    let margin = (half_span + half_w).min(t / 2.0);
    let span = (t - 2.0 * margin).max(0.0);
    let gap_min = (m as f64 - 1.0) * spec.offset_frac * t + spec.evidence_width + 0.05;
    let mut reps = spec.events_per_sample;
    while reps > 1 && (reps as f64 - 1.0) * gap_min > span {
        reps -= 1;
    }
    let u_gap: f64 = rng.gen();
    let u_t0: f64 = rng.gen();
    let base_times: Vec<f64> = if reps == 1 {
        vec![margin + u_t0 * span]
    } else {
        let gap_max = span / (reps as f64 - 1.0);
        let gap = gap_min + u_gap * (gap_max - gap_min);
        let t0 = margin + u_t0 * (span - (reps as f64 - 1.0) * gap);
        (0..reps).map(|j| t0 + j as f64 * gap).collect()
    };

    // Dense pair-code key fields: one fresh key per cell, shared by all
    // modalities, each reading the field at its own offset.
    let field_for = |plan: CodePlan, base: usize, rng: &mut ChaCha8Rng| -> Option<PairField> {
        if spec.evidence_scheme != EvidenceScheme::PairCode || plan.alphabet == 0 {
            return None;
        }
        let u_min = -half_span;
        let span = t + 2.0 * half_span;
        let n_cells = (span / spec.pair_key_cell).ceil() as usize + 1;
        let keys = (0..n_cells).map(|_| rng.gen_range(0..plan.alphabet)).collect();
        Some(PairField { u_min, cell: spec.pair_key_cell, keys, alphabet: plan.alphabet, base })
    };
    let verb_field = field_for(verb_plan, layout.verb_pair.start, &mut rng);
    let noun_field = if spec.noun_classes.is_some() {
        field_for(noun_plan, layout.noun_pair.start, &mut rng)
    } else {
        None
    };
    let verb_residue = verb / verb_plan.marginal_count;
    let noun_residue = noun / noun_plan.marginal_count;

    let distractor_mod = spec.distractor_modality.unwrap_or(m - 1);
    let mut any_distractor = false;
    let mut streams = std::collections::BTreeMap::new();

    for (mod_idx, modality) in spec.modalities.iter().enumerate() {
        // Evidence centers for this modality; consecutive modalities are
        // offset by exactly offset_frac * T.
        let coeff = mod_idx as f64 - (m as f64 - 1.0) / 2.0;
        let offset = coeff * spec.offset_frac * t;
        let rank = informative.iter().position(|&im| im == mod_idx);

        // Marginal events: (center seconds, global template indices).
        let mut events: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut fields: Vec<ActiveField<'_>> = Vec::new();
        if let Some(rank) = rank {
            for &base in &base_times {
                let t_event = (base + offset).clamp(half_w, t - half_w);
                events.push((
                    t_event,
                    vec![marginal_index(spec.evidence_scheme, &layout.verb_marginal, verb_plan, verb)],
                ));
                if spec.noun_classes.is_some() {
                    events.push((
                        t_event,
                        vec![marginal_index(
                            spec.evidence_scheme,
                            &layout.noun_marginal,
                            noun_plan,
                            noun,
                        )],
                    ));
                }
            }
            if let Some(field) = &verb_field {
                fields.push(ActiveField { field, rank, residue: verb_residue, offset });
            }
            if let Some(field) = &noun_field {
                fields.push(ActiveField { field, rank, residue: noun_residue, offset });
            }
        }
        if mod_idx == distractor_mod && spec.distractor_rate > 0.0 {
            let poisson = Poisson::new(spec.distractor_rate * t)
                .map_err(|e| Error::InvalidArgument(format!("distractor rate: {e}")))?;
            let n_events = poisson.sample(&mut rng) as usize;
            let own_marginal = events.first().map(|(_, idx)| idx[0]);
            for _ in 0..n_events {
                let center = half_w + rng.gen::<f64>() * (t - 2.0 * half_w).max(0.0);
                // A marginal template other than this modality's own.
                let marginal_len = layout.verb_marginal.len();
                let own = own_marginal.unwrap_or(layout.verb_marginal.start);
                let other = if marginal_len > 1 {
                    layout.verb_marginal.start
                        + (own - layout.verb_marginal.start + 1 + rng.gen_range(0..marginal_len - 1))
                            % marginal_len
                } else {
                    own
                };
                events.push((center, vec![other]));
                any_distractor = true;
            }
        }

        let rel_path = format!("streams/{video_id}.{}.f32", modality.id);
        let (samples, sidecar) = match modality.kind {
            ModalityKind::VectorFrame => {
                render_vector_stream(spec, modality, &events, &fields, all_templates, &mut rng)
            }
            ModalityKind::AudioWaveform => {
                render_audio_stream(spec, modality, &events, &fields, &mut rng)?
            }
        };
        write_stream(&out_dir.join(&rel_path), &samples, &sidecar)?;
        streams.insert(modality.id.clone(), rel_path);
    }

    let mut tags = std::collections::BTreeSet::new();
    if any_distractor {
        tags.insert("distractor".to_string());
    }
    Ok(ManifestRecord {
        video_id: video_id.to_string(),
        start: 0.0,
        end: t,
        verb_class: verb,
        noun_class: noun,
        tags,
        streams,
    })
}

fn render_vector_stream(
    spec: &SynthSpec,
    modality: &SynthModality,
    events: &[(f64, Vec<usize>)],
    fields: &[ActiveField<'_>],
    all_templates: &[Vec<f32>],
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, StreamSidecar) {
    let n_frames = (spec.duration * modality.rate).floor() as usize;
    let dim = spec.frame_dim;
    let mut data = vec![0.0f32; n_frames * dim];
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f64, spec.noise_sigma).expect("noise sigma");
        for v in &mut data {
            *v = normal.sample(rng) as f32;
        }
    }
    let half_w = spec.evidence_width / 2.0;
    let gain = spec.template_gain as f32;
    for frame in 0..n_frames {
        let ft = (frame as f64 + 0.5) / modality.rate;
        let row = &mut data[frame * dim..(frame + 1) * dim];
        for (center, indices) in events {
            if ft >= center - half_w && ft < center + half_w {
                for &idx in indices {
                    for (v, &tv) in row.iter_mut().zip(&all_templates[idx]) {
                        *v += gain * tv;
                    }
                }
            }
        }
        for active in fields {
            let idx = active.field.template_at(ft - active.offset, active.rank, active.residue);
            for (v, &tv) in row.iter_mut().zip(&all_templates[idx]) {
                *v += gain * tv;
            }
        }
    }
    let sidecar = StreamSidecar {
        kind: ModalityKind::VectorFrame,
        rate: modality.rate,
        frame_dim: Some(dim),
        sample_rate: None,
        channels: None,
        length: n_frames,
    };
    (data, sidecar)
}

fn render_audio_stream(
    spec: &SynthSpec,
    modality: &SynthModality,
    events: &[(f64, Vec<usize>)],
    fields: &[ActiveField<'_>],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f32>, StreamSidecar)> {
    let rate = modality.rate;
    let n_samples = (spec.duration * rate).floor() as usize;
    let mut data = vec![0.0f32; n_samples];
    // Audio noise is scaled down: tone amplitudes are ~0.5 while template
    // vectors are unit-norm across frame_dim dimensions.
    let sigma = spec.noise_sigma * 0.04;
    if sigma > 0.0 {
        let normal = Normal::new(0.0f64, sigma).expect("noise sigma");
        for v in &mut data {
            *v = normal.sample(rng) as f32;
        }
    }
    let half_w = spec.evidence_width / 2.0;
    for (center, indices) in events {
        for &idx in indices {
            let signature = render_audio_signature(idx, spec.evidence_width)?;
            let start = ((center - half_w) * rate).round() as i64;
            for (offset, &s) in signature.samples.iter().enumerate() {
                let pos = start + offset as i64;
                if (0..n_samples as i64).contains(&pos) {
                    data[pos as usize] += s;
                }
            }
        }
    }
    // Key-field tones: one chord per cell, read at this modality's offset.
    for active in fields {
        let field = active.field;
        for cell in 0..field.keys.len() {
            let u_start = field.u_min + cell as f64 * field.cell;
            let t_start = (u_start + active.offset).max(0.0);
            let t_end = (u_start + field.cell + active.offset).min(spec.duration);
            if t_end <= t_start {
                continue;
            }
            let idx = field.template_at(u_start + field.cell * 0.5, active.rank, active.residue);
            let signature = render_audio_signature(idx, t_end - t_start)?;
            let start = (t_start * rate).round() as i64;
            for (offset, &s) in signature.samples.iter().enumerate() {
                let pos = start + offset as i64;
                if (0..n_samples as i64).contains(&pos) {
                    data[pos as usize] += s;
                }
            }
        }
    }
    let sidecar = StreamSidecar {
        kind: ModalityKind::AudioWaveform,
        rate,
        frame_dim: None,
        sample_rate: Some(rate as u32),
        channels: Some(1),
        length: n_samples,
    };
    Ok((data, sidecar))
}
