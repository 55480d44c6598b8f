//! Temporal index mathematics for multi-rate sampling.
//!
//! One anchor modality is sparsely sampled over K equal segments; companion
//! modalities are drawn inside a binding window of half-width `b` seconds
//! around each anchor. With `b = 0` the window degenerates to approximate
//! synchronisation by frame-rate index mapping.
//!
//! All functions are pure over immutable inputs plus an explicit seeded rng;
//! nothing here touches global state.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One modality of a recording: an identifier, its sampling rate in Hz and
/// how raw samples are addressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub id: String,
    pub rate: f64,
    pub kind: ModalityKind,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalityKind {
    /// Fixed-size vector per frame, addressed by integer frame index.
    VectorFrame,
    /// Raw waveform, addressed by a window-center time in seconds.
    AudioWaveform,
}

impl ModalitySpec {
    pub fn new(id: impl Into<String>, rate: f64, kind: ModalityKind) -> Self {
        ModalitySpec { id: id.into(), rate, kind }
    }

    fn check_rate(&self) -> Result<()> {
        if self.rate > 0.0 && self.rate.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "modality {:?} has non-positive rate {}",
                self.id, self.rate
            )))
        }
    }
}

/// A labelled `(verb, noun)` time interval inside an untrimmed recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub verb_class: usize,
    pub noun_class: usize,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl ActionSegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn validate(&self) -> Result<()> {
        if self.end > self.start {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "segment {}: end {} must exceed start {}",
                self.video_id, self.end, self.start
            )))
        }
    }
}

/// How tuples are drawn.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// One random anchor per segment, companions random within the window.
    TrainRandom,
    /// Evenly spaced anchors, synchronous companions, rng-free.
    TestDeterministic,
    /// A single random window over the whole action; used by width sweeps.
    TestSingleTbw,
}

/// Binding-window settings. The half-width is expressed as a fraction of the
/// action duration (`b = width_rel * T` seconds) so that windows scale with
/// action length.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub struct TbwConfig {
    /// Number of temporal segments K.
    pub segments: usize,
    /// Window half-width as a fraction of the action duration.
    pub width_rel: f64,
    pub mode: SamplingMode,
    /// Anchor count for deterministic evaluation.
    pub test_anchors: usize,
}

impl Default for TbwConfig {
    fn default() -> Self {
        TbwConfig {
            segments: 3,
            width_rel: 1.0,
            mode: SamplingMode::TrainRandom,
            test_anchors: 25,
        }
    }
}

impl TbwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::InvalidArgument("segment count K must be >= 1".into()));
        }
        if self.width_rel < 0.0 || !self.width_rel.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "window width fraction {} must be >= 0",
                self.width_rel
            )));
        }
        if self.test_anchors == 0 {
            return Err(Error::InvalidArgument("test anchor count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where a sample sits in one modality's stream.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub enum SamplePos {
    /// Clamped frame index into a vector-frame stream.
    Frame(usize),
    /// Window-center seconds into a waveform; may lie outside the stream,
    /// in which case window extraction pads.
    Time(f64),
}

/// One modality's draw: the raw window index (before any clamping) and the
/// resolved position.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySample {
    pub raw_index: i64,
    pub pos: SamplePos,
}

/// One binding window's choice of samples, one entry per modality in spec
/// order; entry 0 is the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTuple {
    pub positions: Vec<ModalitySample>,
}

impl SampleTuple {
    pub fn anchor_index(&self) -> i64 {
        self.positions[0].raw_index
    }
}

/// Companion placement at evaluation time.
#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompanionPlacement {
    /// Deterministic frame-rate index mapping (the `b = 0` degenerate case).
    Synchronous,
    /// Uniform draw inside the binding window of the given relative width.
    Window { width_rel: f64 },
}

/// Maps index `j` at `r_from` Hz onto the `r_to` Hz grid:
/// `ceil(j * r_to / r_from)`.
pub fn map_index(j: i64, r_from: f64, r_to: f64) -> Result<i64> {
    check_rates(r_from, r_to)?;
    debug_assert!(j >= 0, "map_index wants a non-negative source index");
    Ok((j as f64 * r_to / r_from).ceil() as i64)
}

/// Inclusive target-index bounds of the binding window around anchor `j`:
/// `[ceil(c - b*r_target), ceil(c + b*r_target)]` with `c = j*r_target/r_anchor`
/// and `b` in seconds. Bounds are *not* clamped to any stream extent.
pub fn tbw_bounds(j: i64, r_anchor: f64, r_target: f64, b_secs: f64) -> Result<(i64, i64)> {
    check_rates(r_anchor, r_target)?;
    if b_secs < 0.0 || !b_secs.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "window half-width {b_secs} must be >= 0 seconds"
        )));
    }
    let center = j as f64 * r_target / r_anchor;
    let radius = b_secs * r_target;
    let lo = (center - radius).ceil() as i64;
    let hi = (center + radius).ceil() as i64;
    Ok((lo, hi))
}

fn check_rates(a: f64, b: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rates must be positive, got {a} and {b}")))
    }
}

/// Number of whole frames a stream of `rate` Hz holds over the segment.
pub fn stream_len(segment: &ActionSegment, rate: f64) -> i64 {
    (segment.duration() * rate).floor() as i64
}

/// Splits the anchor stream into K contiguous half-open index ranges covering
/// `[0, floor(T*rate))`. The first K-1 ranges share a width of `floor(N/K)`;
/// the last absorbs the remainder.
pub fn partition_segments(
    segment: &ActionSegment,
    k: usize,
    rate: f64,
) -> Result<Vec<Range<i64>>> {
    segment.validate()?;
    check_rates(rate, rate)?;
    if k == 0 {
        return Err(Error::InvalidArgument("segment count K must be >= 1".into()));
    }
    let n = stream_len(segment, rate);
    if n < k as i64 {
        return Err(Error::TooShortSegment { frames: n, rate, needed: k });
    }
    let width = n / k as i64;
    let mut ranges = Vec::with_capacity(k);
    for i in 0..k as i64 {
        let start = i * width;
        let end = if i == k as i64 - 1 { n } else { (i + 1) * width };
        ranges.push(start..end);
    }
    Ok(ranges)
}

/// Draws a companion index for `spec` from the window around anchor `j`,
/// clamping vector-frame indices into the stream and converting waveform
/// indices to center seconds. `rng` is only consumed when the window has more
/// than one candidate, so `b = 0` consumes no randomness.
fn place_companion(
    segment: &ActionSegment,
    anchor_rate: f64,
    spec: &ModalitySpec,
    j: i64,
    b_secs: f64,
    rng: Option<&mut dyn FnMut(i64, i64) -> i64>,
) -> Result<ModalitySample> {
    let (lo, hi) = tbw_bounds(j, anchor_rate, spec.rate, b_secs)?;
    let raw = if lo == hi {
        lo
    } else {
        match rng {
            Some(draw) => draw(lo, hi),
            None => map_index(j, anchor_rate, spec.rate)?,
        }
    };
    Ok(resolve_position(segment, spec, raw))
}

fn resolve_position(segment: &ActionSegment, spec: &ModalitySpec, raw: i64) -> ModalitySample {
    let pos = match spec.kind {
        ModalityKind::VectorFrame => {
            let n = stream_len(segment, spec.rate).max(1);
            SamplePos::Frame(raw.clamp(0, n - 1) as usize)
        }
        ModalityKind::AudioWaveform => SamplePos::Time(raw as f64 / spec.rate),
    };
    ModalitySample { raw_index: raw, pos }
}

/// Training sampler: one anchor uniform per segment range, companions uniform
/// within each anchor's binding window. Returns exactly K tuples, i.e. K * M
/// sample positions for M modalities.
pub fn sample_training_tuples(
    segment: &ActionSegment,
    specs: &[ModalitySpec],
    config: &TbwConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SampleTuple>> {
    config.validate()?;
    let anchor = specs_anchor(specs)?;
    let ranges = partition_segments(segment, config.segments, anchor.rate)?;
    let b_secs = config.width_rel * segment.duration();
    let mut tuples = Vec::with_capacity(config.segments);
    for range in ranges {
        let j = rng.gen_range(range.start..range.end);
        tuples.push(build_tuple(segment, specs, j, b_secs, Some(rng))?);
    }
    Ok(tuples)
}

/// Deterministic evaluation sampler: anchors at the centers of
/// `test_anchors` evenly spaced sub-intervals, companions at the synchronous
/// mapping. A pure function of its arguments.
pub fn sample_test_tuples(
    segment: &ActionSegment,
    specs: &[ModalitySpec],
    config: &TbwConfig,
) -> Result<Vec<SampleTuple>> {
    config.validate()?;
    let anchor = specs_anchor(specs)?;
    // The anchor stream must hold at least one frame.
    partition_segments(segment, 1, anchor.rate)?;
    let n = stream_len(segment, anchor.rate);
    let count = config.test_anchors;
    let mut tuples = Vec::with_capacity(count);
    for i in 0..count {
        let j = ((i as f64 + 0.5) * n as f64 / count as f64).floor() as i64;
        let j = j.min(n - 1);
        tuples.push(build_tuple::<rand_chacha::ChaCha8Rng>(segment, specs, j, 0.0, None)?);
    }
    Ok(tuples)
}

/// Evaluation sampler with selectable companion placement: anchors as in
/// [`sample_test_tuples`], companions either synchronous or drawn within the
/// binding window.
pub fn sample_eval_tuples(
    segment: &ActionSegment,
    specs: &[ModalitySpec],
    config: &TbwConfig,
    placement: CompanionPlacement,
    rng: &mut impl Rng,
) -> Result<Vec<SampleTuple>> {
    match placement {
        CompanionPlacement::Synchronous => sample_test_tuples(segment, specs, config),
        CompanionPlacement::Window { width_rel } => {
            config.validate()?;
            let anchor = specs_anchor(specs)?;
            partition_segments(segment, 1, anchor.rate)?;
            let n = stream_len(segment, anchor.rate);
            let b_secs = width_rel.max(0.0) * segment.duration();
            let count = config.test_anchors;
            let mut tuples = Vec::with_capacity(count);
            for i in 0..count {
                let j = ((i as f64 + 0.5) * n as f64 / count as f64).floor() as i64;
                let j = j.min(n - 1);
                tuples.push(build_tuple(segment, specs, j, b_secs, Some(rng))?);
            }
            Ok(tuples)
        }
    }
}

/// Width-sweep sampler: one anchor uniform over the whole action, companions
/// uniform within a window of half-width `b_secs`.
pub fn sample_single_tbw(
    segment: &ActionSegment,
    specs: &[ModalitySpec],
    b_secs: f64,
    rng: &mut impl Rng,
) -> Result<SampleTuple> {
    let anchor = specs_anchor(specs)?;
    partition_segments(segment, 1, anchor.rate)?;
    let n = stream_len(segment, anchor.rate);
    let j = rng.gen_range(0..n);
    build_tuple(segment, specs, j, b_secs, Some(rng))
}

fn specs_anchor<'s>(specs: &'s [ModalitySpec]) -> Result<&'s ModalitySpec> {
    let anchor = specs
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one modality required".into()))?;
    for s in specs {
        s.check_rate()?;
    }
    Ok(anchor)
}

fn build_tuple<R: Rng>(
    segment: &ActionSegment,
    specs: &[ModalitySpec],
    j: i64,
    b_secs: f64,
    mut rng: Option<&mut R>,
) -> Result<SampleTuple> {
    let anchor = &specs[0];
    let mut positions = Vec::with_capacity(specs.len());
    positions.push(resolve_position(segment, anchor, j));
    for spec in &specs[1..] {
        let sample = match rng.as_deref_mut() {
            Some(r) => {
                let mut draw = |lo: i64, hi: i64| r.gen_range(lo..=hi);
                place_companion(segment, anchor.rate, spec, j, b_secs, Some(&mut draw))?
            }
            None => place_companion(segment, anchor.rate, spec, j, b_secs, None)?,
        };
        positions.push(sample);
    }
    Ok(SampleTuple { positions })
}
