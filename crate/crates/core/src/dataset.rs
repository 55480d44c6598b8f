//! On-disk dataset layout and loading.
//!
//! A dataset directory holds `dataset.json` (ordered modality specs and class
//! counts), JSON-lines manifests (`train.jsonl`, `test.jsonl`) and a
//! `streams/` directory of raw little-endian `f32` files, each with a JSON
//! sidecar describing rate and shape.

use std::collections::BTreeSet;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::sampler::{ActionSegment, ModalityKind, ModalitySpec};

/// Sidecar record written next to every raw stream file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSidecar {
    pub kind: ModalityKind,
    pub rate: f64,
    /// Vector width for frame streams.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_dim: Option<usize>,
    /// Waveform rate for audio streams (equals `rate`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// Frames for vector streams, per-channel samples for audio.
    pub length: usize,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub verb_class: usize,
    pub noun_class: usize,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    /// Modality id -> stream path relative to the manifest's directory.
    pub streams: BTreeMap<String, String>,
}

impl ManifestRecord {
    pub fn segment(&self) -> ActionSegment {
        ActionSegment {
            video_id: self.video_id.clone(),
            start: self.start,
            end: self.end,
            verb_class: self.verb_class,
            noun_class: self.noun_class,
            tags: self.tags.clone(),
        }
    }
}

/// Dataset-level description, written once at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub modalities: Vec<ModalitySpec>,
    pub verb_classes: usize,
    pub noun_classes: usize,
}

/// Raw samples of one modality of one segment, loaded into memory.
#[derive(Debug, Clone)]
pub enum StreamData {
    Frames { rate: f64, dim: usize, data: Vec<f32> },
    Audio(Waveform),
}

impl StreamData {
    pub fn frame(&self, index: usize) -> &[f32] {
        match self {
            StreamData::Frames { dim, data, .. } => &data[index * dim..(index + 1) * dim],
            StreamData::Audio(_) => panic!("frame() on an audio stream"),
        }
    }

    pub fn n_frames(&self) -> usize {
        match self {
            StreamData::Frames { dim, data, .. } => data.len() / dim,
            StreamData::Audio(w) => w.frames(),
        }
    }
}

/// One loadable segment: label metadata plus its streams in spec order.
#[derive(Debug, Clone)]
pub struct LoadedSegment {
    pub segment: ActionSegment,
    pub streams: Vec<StreamData>,
}

/// A fully loaded split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub specs: Vec<ModalitySpec>,
    pub verb_classes: usize,
    pub noun_classes: usize,
    pub segments: Vec<LoadedSegment>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Per-class verb counts, used for tail splits.
    pub fn verb_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.verb_classes];
        for seg in &self.segments {
            counts[seg.segment.verb_class] += 1;
        }
        counts
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("parsing {}: {e}", path.display())))
}

/// Writes raw little-endian `f32` samples plus the sidecar (`<path>.json`).
pub fn write_stream(path: &Path, samples: &[f32], sidecar: &StreamSidecar) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), sidecar)
}

pub fn sidecar_path(stream_path: &Path) -> PathBuf {
    let mut name = stream_path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    stream_path.with_file_name(name)
}

pub fn read_stream(path: &Path) -> Result<(Vec<f32>, StreamSidecar)> {
    let sidecar: StreamSidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a whole number of f32s",
            path.display(),
            bytes.len()
        )));
    }
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let expected = match sidecar.kind {
        ModalityKind::VectorFrame => sidecar.length * sidecar.frame_dim.unwrap_or(0),
        ModalityKind::AudioWaveform => sidecar.length * sidecar.channels.unwrap_or(1),
    };
    if samples.len() != expected {
        return Err(Error::Format(format!(
            "{}: sidecar promises {expected} samples, file holds {}",
            path.display(),
            samples.len()
        )));
    }
    Ok((samples, sidecar))
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Format(format!("serializing manifest record: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Loads a manifest and every referenced stream. `modality_subset`, when
/// given, restricts and orders the loaded modalities; otherwise the order
/// from `dataset.json` applies (the first entry is the anchor).
pub fn load_dataset(manifest_path: &Path, modality_subset: Option<&[String]>) -> Result<Dataset> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
    let wanted: Vec<ModalitySpec> = match modality_subset {
        None => meta.modalities.clone(),
        Some(ids) => {
            let mut specs = Vec::with_capacity(ids.len());
            for id in ids {
                let spec = meta
                    .modalities
                    .iter()
                    .find(|m| &m.id == id)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "modality {id:?} not in dataset (has: {})",
                            meta.modalities
                                .iter()
                                .map(|m| m.id.as_str())
                                .collect::<Vec<_>>()
                                .join(", ")
                        ))
                    })?;
                specs.push(spec.clone());
            }
            specs
        }
    };
    if wanted.is_empty() {
        return Err(Error::Config("no modalities selected".into()));
    }

    let records = read_manifest(manifest_path)?;
    let mut segments = Vec::with_capacity(records.len());
    for rec in &records {
        if rec.verb_class >= meta.verb_classes || rec.noun_class >= meta.noun_classes {
            return Err(Error::Format(format!(
                "{}: class ids ({}, {}) exceed dataset counts ({}, {})",
                rec.video_id, rec.verb_class, rec.noun_class, meta.verb_classes, meta.noun_classes
            )));
        }
        let mut streams = Vec::with_capacity(wanted.len());
        for spec in &wanted {
            let rel = rec.streams.get(&spec.id).ok_or_else(|| {
                Error::Format(format!("{}: missing stream for {:?}", rec.video_id, spec.id))
            })?;
            let (samples, sidecar) = read_stream(&dir.join(rel))?;
            if sidecar.kind != spec.kind || (sidecar.rate - spec.rate).abs() > 1e-9 {
                return Err(Error::Format(format!(
                    "{}: stream {:?} disagrees with dataset spec",
                    rec.video_id, spec.id
                )));
            }
            let stream = match sidecar.kind {
                ModalityKind::VectorFrame => StreamData::Frames {
                    rate: sidecar.rate,
                    dim: sidecar.frame_dim.ok_or_else(|| {
                        Error::Format(format!("{rel}: vector stream without frame_dim"))
                    })?,
                    data: samples,
                },
                ModalityKind::AudioWaveform => StreamData::Audio(Waveform {
                    samples,
                    sample_rate: sidecar.sample_rate.unwrap_or(sidecar.rate as u32),
                    channels: sidecar.channels.unwrap_or(1),
                }),
            };
            streams.push(stream);
        }
        segments.push(LoadedSegment { segment: rec.segment(), streams });
    }
    Ok(Dataset {
        specs: wanted,
        verb_classes: meta.verb_classes,
        noun_classes: meta.noun_classes,
        segments,
    })
}
