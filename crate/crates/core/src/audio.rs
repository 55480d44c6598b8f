//! Waveform to log-spectrogram frontend.
//!
//! Raw audio is converted to 24 kHz mono, a 1.28 s window is cut around a
//! center time (zero-padded past the recording edges), and each window is
//! turned into a 256x256 log-magnitude spectrogram: 256 frames at a 5 ms hop,
//! each a 10 ms Hann-windowed slice zero-padded to a 512-point transform of
//! which bins 0..=255 are kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_RATE: u32 = 24_000;
/// 1.28 s at 24 kHz.
pub const WINDOW_SAMPLES: usize = 30_720;
/// 10 ms analysis window.
pub const FRAME_LEN: usize = 240;
/// 5 ms hop.
pub const HOP: usize = 120;
/// Transform size; bins 0..=255 are kept as the frequency axis.
pub const FFT_SIZE: usize = 512;
pub const SPEC_BINS: usize = 256;
pub const SPEC_FRAMES: usize = 256;
/// Additive floor before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

/// Interleaved multi-channel audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: usize,
}

impl Waveform {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate, channels: 1 }
    }

    /// Frames per channel.
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("empty waveform".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("waveform sample rate must be > 0".into()));
        }
        if self.channels == 0 || self.samples.len() % self.channels != 0 {
            return Err(Error::InvalidArgument(format!(
                "waveform length {} does not divide into {} channel(s)",
                self.samples.len(),
                self.channels
            )));
        }
        Ok(())
    }
}

/// Log-magnitude spectrogram, row-major `[frequency][time]`, always
/// [`SPEC_BINS`] x [`SPEC_FRAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f32>,
    pub center_time: f64,
}

impl Spectrogram {
    pub fn value(&self, freq_bin: usize, frame: usize) -> f32 {
        self.values[freq_bin * SPEC_FRAMES + frame]
    }

    /// Frequency bin with the largest magnitude in one time frame.
    pub fn column_argmax(&self, frame: usize) -> usize {
        let mut best = 0;
        for bin in 1..SPEC_BINS {
            if self.value(bin, frame) > self.value(best, frame) {
                best = bin;
            }
        }
        best
    }
}

/// Downmixes to a single channel (per-frame mean) and linearly resamples to
/// 24 kHz. A 24 kHz mono input is returned unchanged, bit for bit.
pub fn prepare_waveform(w: &Waveform) -> Result<Waveform> {
    w.validate()?;
    if w.channels == 1 && w.sample_rate == TARGET_RATE {
        return Ok(w.clone());
    }
    let frames = w.frames();
    let mono: Vec<f32> = if w.channels == 1 {
        w.samples.clone()
    } else {
        (0..frames)
            .map(|f| {
                let base = f * w.channels;
                let sum: f64 = w.samples[base..base + w.channels]
                    .iter()
                    .map(|&s| f64::from(s))
                    .sum();
                (sum / w.channels as f64) as f32
            })
            .collect()
    };
    if w.sample_rate == TARGET_RATE {
        return Ok(Waveform::mono(mono, TARGET_RATE));
    }
    let ratio = f64::from(w.sample_rate) / f64::from(TARGET_RATE);
    let out_len = ((frames as f64 / ratio).round() as usize).max(1);
    let resampled: Vec<f32> = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let a = mono[lo.min(frames - 1)];
            let b = mono[(lo + 1).min(frames - 1)];
            (f64::from(a) * (1.0 - frac) + f64::from(b) * frac) as f32
        })
        .collect();
    Ok(Waveform::mono(resampled, TARGET_RATE))
}

/// Cuts exactly [`WINDOW_SAMPLES`] samples centered at `center` seconds from
/// a 24 kHz mono recording, zero-padding where the window extends beyond the
/// recording boundaries.
pub fn extract_window(w: &Waveform, center: f64) -> Result<Waveform> {
    w.validate()?;
    if w.channels != 1 || w.sample_rate != TARGET_RATE {
        return Err(Error::InvalidArgument(format!(
            "window extraction wants 24 kHz mono input, got {} Hz x{} channels",
            w.sample_rate, w.channels
        )));
    }
    let len = w.samples.len() as i64;
    let center_sample = (center * f64::from(TARGET_RATE)).round() as i64;
    let start = center_sample - (WINDOW_SAMPLES / 2) as i64;
    let mut out = vec![0.0f32; WINDOW_SAMPLES];
    for (slot, idx) in (start..start + WINDOW_SAMPLES as i64).enumerate() {
        if (0..len).contains(&idx) {
            out[slot] = w.samples[idx as usize];
        }
    }
    Ok(Waveform::mono(out, TARGET_RATE))
}

/// Log-magnitude spectrogram of one 1.28 s window. Frame `i` is centered at
/// sample `i * HOP` with reflect padding at the left edge; each frame is
/// Hann-windowed, zero-padded to [`FFT_SIZE`] points, and bins 0..=255 of the
/// magnitude become `ln(magnitude + 1e-5)`.
pub fn log_spectrogram(samples: &[f32], center_time: f64) -> Result<Spectrogram> {
    if samples.len() != WINDOW_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "spectrogram input must be exactly {WINDOW_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let hann = hann_window(FRAME_LEN);
    let mut values = vec![0.0f32; SPEC_BINS * SPEC_FRAMES];
    let mut re = vec![0.0f64; FFT_SIZE];
    let mut im = vec![0.0f64; FFT_SIZE];
    for frame in 0..SPEC_FRAMES {
        let center = (frame * HOP) as i64;
        re.fill(0.0);
        im.fill(0.0);
        for (n, w) in hann.iter().enumerate() {
            let idx = center - (FRAME_LEN / 2) as i64 + n as i64;
            // Reflect indexing at the start: sample[-k] -> sample[k]. The
            // final frame ends exactly at the window edge, so only the left
            // side ever needs padding.
            let idx = if idx < 0 { -idx } else { idx } as usize;
            re[n] = f64::from(samples[idx]) * w;
        }
        fft_in_place(&mut re, &mut im);
        for bin in 0..SPEC_BINS {
            let mag = (re[bin] * re[bin] + im[bin] * im[bin]).sqrt();
            values[bin * SPEC_FRAMES + frame] = (mag + LOG_FLOOR).ln() as f32;
        }
    }
    Ok(Spectrogram { values, center_time })
}

/// Full pipeline for one binding-window sample: cut the window at `center`
/// seconds and convert it.
pub fn window_spectrogram(recording: &Waveform, center: f64) -> Result<Spectrogram> {
    let window = extract_window(recording, center)?;
    log_spectrogram(&window.samples, center)
}

/// Mean-pools `patch x patch` blocks of a spectrogram into a flat row-major
/// feature vector of length `(256/patch)^2`.
pub fn mean_pool_patches(spec: &Spectrogram, patch: usize) -> Result<Vec<f32>> {
    if patch == 0 || SPEC_BINS % patch != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch} must divide {SPEC_BINS}"
        )));
    }
    let side = SPEC_BINS / patch;
    let inv = 1.0 / (patch * patch) as f64;
    let mut out = vec![0.0f32; side * side];
    for pr in 0..side {
        for pc in 0..side {
            let mut acc = 0.0f64;
            for r in pr * patch..(pr + 1) * patch {
                for c in pc * patch..(pc + 1) * patch {
                    acc += f64::from(spec.values[r * SPEC_FRAMES + c]);
                }
            }
            out[pr * side + pc] = (acc * inv) as f32;
        }
    }
    Ok(out)
}

fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Iterative radix-2 FFT, in place over split real/imaginary buffers.
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && n == im.len());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let (a, b) = (start + k, start + k + len / 2);
                let odd_re = re[b] * cur_re - im[b] * cur_im;
                let odd_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - odd_re;
                im[b] = im[a] - odd_im;
                re[a] += odd_re;
                im[a] += odd_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
        }
        len <<= 1;
    }
}
