//! Run configuration: one JSON document covering generation, model, training
//! and evaluation settings, with CLI flags layered on top. The effective
//! (merged) config is written next to every command's outputs so a run can
//! be reproduced from it alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tbn_core::dataset::write_json;
use tbn_core::error::{Error, Result};
use tbn_core::model::{FusionKind, Hyperparams, ScoreMode, TbwSettings};
use tbn_core::synthgen::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub fusion: FusionKind,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub fused_dim: usize,
    pub dropout: f64,
    pub audio_pool: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            fusion: FusionKind::Concat,
            feature_dim: 64,
            hidden_dim: 64,
            fused_dim: 512,
            dropout: 0.5,
            audio_pool: 4,
        }
    }
}

/// Companion placement at evaluation time.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CompanionMode {
    /// Frame-rate index mapping (the default test protocol).
    Sync,
    /// Random draws within the checkpoint's binding window.
    Tbw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub companions: CompanionMode,
    pub score: ScoreMode,
    pub subset_tag: Option<String>,
    pub ensemble: Vec<PathBuf>,
    pub anchors: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            companions: CompanionMode::Sync,
            score: ScoreMode::MeanLogits,
            subset_tag: None,
            ensemble: Vec::new(),
            anchors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Width labels: `sync`, `T`, fractions like `T/30` or `2T/3`, or plain
    /// numbers (fractions of the action duration).
    pub widths: Vec<String>,
    pub runs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            widths: ["sync", "T/60", "T/30", "T/25", "T/15", "T/10", "T/5", "T/3"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            runs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Modality subset (and order; the first is the anchor). `None` uses the
    /// dataset's full list.
    pub modalities: Option<Vec<String>>,
    pub synth: SynthSpec,
    pub model: ModelSection,
    pub tbw: TbwSettings,
    pub train: Hyperparams,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Writes the merged configuration next to the outputs. The output
    /// directory itself is omitted so identical runs into different
    /// directories produce byte-identical trees; pass `--out` when
    /// re-running from this file.
    pub fn write_effective(&self, out_dir: &Path) -> Result<()> {
        let mut effective = self.clone();
        effective.out_dir = None;
        write_json(&out_dir.join("config.json"), &effective)
    }
}

/// Parses a sweep width label into a fraction of the action duration.
pub fn parse_width(label: &str) -> Result<f64> {
    let trimmed = label.trim();
    if trimmed.eq_ignore_ascii_case("sync") {
        return Ok(0.0);
    }
    if trimmed.eq_ignore_ascii_case("t") {
        return Ok(1.0);
    }
    if let Some(rest) = trimmed.strip_prefix("T/").or_else(|| trimmed.strip_prefix("t/")) {
        let denom: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad width {label:?}")))?;
        if denom <= 0.0 {
            return Err(Error::Config(format!("bad width {label:?}")));
        }
        return Ok(1.0 / denom);
    }
    // Forms like "2T/3".
    if let Some((num, denom)) = trimmed.split_once("T/").or_else(|| trimmed.split_once("t/")) {
        if let (Ok(n), Ok(d)) = (num.parse::<f64>(), denom.parse::<f64>()) {
            if d > 0.0 {
                return Ok(n / d);
            }
        }
        return Err(Error::Config(format!("bad width {label:?}")));
    }
    trimmed
        .parse::<f64>()
        .ok()
        .filter(|w| *w >= 0.0 && w.is_finite())
        .ok_or_else(|| Error::Config(format!("bad width {label:?}")))
}
