//! Fundamental-frequency tracks and normalized pitch contours.
//!
//! Tracks arrive as plain-text files of Hz values (one per line) produced by
//! an external pitch extractor. They are converted to MIDI pitch, normalized
//! to [0, 1] by dividing by 127, and chunked into fixed-length windows for
//! the encoder. Unvoiced frames are 0 Hz on input and exactly 0.0 after
//! normalization.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Frame rate the external extractor is expected to run at.
pub const SAMPLE_RATE_HZ: f64 = 44100.0;
pub const HOP_SAMPLES: u32 = 256;
pub const MIDI_MAX: f64 = 127.0;
/// Default training window length in frames.
pub const DEFAULT_CHUNK_LEN: usize = 1000;

/// Raw fundamental-frequency track for one recording. 0 Hz marks unvoiced
/// frames; every other value must sit below Nyquist.
#[derive(Debug, Clone)]
pub struct F0Track {
    pub recording_id: String,
    pub frequencies_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    pub hop_samples: u32,
}

impl F0Track {
    pub fn new(recording_id: impl Into<String>, frequencies_hz: Vec<f64>) -> Result<Self> {
        let recording_id = recording_id.into();
        if frequencies_hz.is_empty() {
            return Err(Error::Validation(format!(
                "f0 track '{recording_id}' is empty"
            )));
        }
        let nyquist = SAMPLE_RATE_HZ / 2.0;
        for (i, &f) in frequencies_hz.iter().enumerate() {
            if !f.is_finite() || f < 0.0 {
                return Err(Error::Validation(format!(
                    "f0 track '{recording_id}' frame {i}: frequency {f} is negative or non-finite"
                )));
            }
            if f >= nyquist {
                return Err(Error::Validation(format!(
                    "f0 track '{recording_id}' frame {i}: frequency {f} Hz is at or above Nyquist ({nyquist} Hz)"
                )));
            }
        }
        Ok(F0Track {
            recording_id,
            frequencies_hz,
            sample_rate_hz: SAMPLE_RATE_HZ,
            hop_samples: HOP_SAMPLES,
        })
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }
}

/// Normalized MIDI-pitch contour: values in [0, 1], unvoiced frames exactly 0.
#[derive(Debug, Clone)]
pub struct PitchContour {
    pub recording_id: String,
    pub values: Vec<f64>,
}

impl PitchContour {
    pub fn new(recording_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let recording_id = recording_id.into();
        if values.is_empty() {
            return Err(Error::Validation(format!(
                "contour '{recording_id}' is empty"
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "contour '{recording_id}' frame {i}: value {v} outside [0, 1]"
                )));
            }
        }
        Ok(PitchContour {
            recording_id,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A fixed-length window of a contour. `start_index` is measured on the
/// zero-padded contour, so `start_index + values.len()` never exceeds
/// `max(contour length, chunk length)`.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub recording_id: String,
    pub values: Vec<f64>,
    pub start_index: usize,
}

/// Convert one Hz value to normalized MIDI pitch.
///
/// 0 Hz (unvoiced) maps to exactly 0.0. Anything else goes through the MIDI
/// formula 69 + 12 log2(f / 440), clamped to [0, 127] before dividing by 127.
pub fn hz_to_normalized_midi(freq_hz: f64) -> Result<f64> {
    if !freq_hz.is_finite() || freq_hz < 0.0 {
        return Err(Error::Validation(format!(
            "frequency {freq_hz} Hz is negative or non-finite"
        )));
    }
    if freq_hz == 0.0 {
        return Ok(0.0);
    }
    let midi = 69.0 + 12.0 * (freq_hz / 440.0).log2();
    Ok(midi.clamp(0.0, MIDI_MAX) / MIDI_MAX)
}

/// Inverse of [`hz_to_normalized_midi`] on (0, 1]; 0 maps back to 0 Hz.
/// Used when materializing synthetic datasets as f0 files.
pub fn normalized_midi_to_hz(value: f64) -> f64 {
    if value == 0.0 {
        return 0.0;
    }
    let midi = value * MIDI_MAX;
    440.0 * ((midi - 69.0) / 12.0).exp2()
}

/// Element-wise conversion of a track to a normalized contour.
pub fn track_to_contour(track: &F0Track) -> Result<PitchContour> {
    if track.frequencies_hz.is_empty() {
        return Err(Error::Validation(format!(
            "f0 track '{}' is empty",
            track.recording_id
        )));
    }
    let values = track
        .frequencies_hz
        .iter()
        .map(|&f| hz_to_normalized_midi(f))
        .collect::<Result<Vec<_>>>()?;
    PitchContour::new(track.recording_id.clone(), values)
}

fn extract(contour: &PitchContour, chunk_len: usize, start: usize) -> Chunk {
    let n = contour.len();
    let mut values = Vec::with_capacity(chunk_len);
    if n >= chunk_len {
        values.extend_from_slice(&contour.values[start..start + chunk_len]);
    } else {
        values.extend_from_slice(&contour.values);
        values.resize(chunk_len, 0.0);
    }
    Chunk {
        recording_id: contour.recording_id.clone(),
        values,
        start_index: start,
    }
}

/// Draw a chunk with a uniformly random start position. Contours shorter
/// than `chunk_len` are zero-padded at the end and start at 0.
pub fn random_chunk(
    contour: &PitchContour,
    chunk_len: usize,
    rng: &mut impl Rng,
) -> Result<Chunk> {
    if chunk_len == 0 {
        return Err(Error::Validation("chunk length must be >= 1".into()));
    }
    let n = contour.len();
    let start = if n > chunk_len {
        rng.random_range(0..=n - chunk_len)
    } else {
        0
    };
    Ok(extract(contour, chunk_len, start))
}

/// Deterministic evaluation-time chunk centered on the contour.
pub fn center_chunk(contour: &PitchContour, chunk_len: usize) -> Result<Chunk> {
    if chunk_len == 0 {
        return Err(Error::Validation("chunk length must be >= 1".into()));
    }
    let n = contour.len();
    let start = n.saturating_sub(chunk_len) / 2;
    Ok(extract(contour, chunk_len, start))
}

/// Deterministic chunk at an explicit start. Used by the multi-chunk
/// evaluation policy, which spaces k starts evenly over the contour.
pub fn chunk_at(contour: &PitchContour, chunk_len: usize, start: usize) -> Result<Chunk> {
    if chunk_len == 0 {
        return Err(Error::Validation("chunk length must be >= 1".into()));
    }
    let max_start = contour.len().saturating_sub(chunk_len);
    if start > max_start {
        return Err(Error::Validation(format!(
            "chunk start {start} exceeds last valid start {max_start}"
        )));
    }
    Ok(extract(contour, chunk_len, start))
}

/// Parse an f0 file: one non-negative decimal Hz value per line, UTF-8,
/// optional trailing newline. The file stem becomes the recording id.
pub fn load_f0_file(path: &Path) -> Result<F0Track> {
    let recording_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frequencies = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return Err(Error::Parse(format!(
                "{}:{}: empty line in f0 file",
                path.display(),
                lineno + 1
            )));
        }
        let value: f64 = trimmed.parse().map_err(|_| {
            Error::Parse(format!(
                "{}:{}: '{}' is not a decimal frequency",
                path.display(),
                lineno + 1,
                trimmed
            ))
        })?;
        frequencies.push(value);
    }
    if frequencies.is_empty() {
        return Err(Error::Validation(format!(
            "{}: f0 file contains no frames",
            path.display()
        )));
    }
    F0Track::new(recording_id, frequencies)
}
