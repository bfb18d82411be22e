//! Dataset plumbing: rating records, manifests, deterministic splits, and a
//! seeded synthetic-data generator used when no real corpus is available.
//!
//! Synthetic recordings are renditions of one shared base melody (auditions
//! of the same exercise). Each recording applies
//!
//! * a recording-level detuning offset plus proportional micro-wobble
//!   (pitch jitter), and
//! * hesitation gaps at note boundaries (timing jitter),
//!
//! and its criterion ratings are deterministic functions of the realized
//! perturbation magnitudes:
//!
//! * `note_accuracy   = 1 - clamp(mean |pitch deviation| / d_max, 0, 1)`
//! * `rhythm_accuracy = 1 - clamp(unvoiced fraction / g_max, 0, 1)`
//! * `musicality      = (note_accuracy + rhythm_accuracy) / 2`
//!
//! before optional Gaussian rating noise, clamped back to [0, 1].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contour::{normalized_midi_to_hz, PitchContour, MIDI_MAX};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// The three assessment criteria carried by every rating record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Musicality,
    NoteAccuracy,
    RhythmAccuracy,
}

pub const CRITERIA: [Criterion; 3] = [
    Criterion::Musicality,
    Criterion::NoteAccuracy,
    Criterion::RhythmAccuracy,
];

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Musicality => "musicality",
            Criterion::NoteAccuracy => "note_accuracy",
            Criterion::RhythmAccuracy => "rhythm_accuracy",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "musicality" => Ok(Criterion::Musicality),
            "note_accuracy" => Ok(Criterion::NoteAccuracy),
            "rhythm_accuracy" => Ok(Criterion::RhythmAccuracy),
            other => Err(Error::Parse(format!(
                "unknown criterion '{other}' (expected musicality, note_accuracy or rhythm_accuracy)"
            ))),
        }
    }
}

/// Ground-truth ratings in [0, 1] for one recording, all criteria present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRecord {
    pub recording_id: String,
    pub ratings: BTreeMap<Criterion, f64>,
}

impl RatingRecord {
    pub fn new(recording_id: impl Into<String>, ratings: BTreeMap<Criterion, f64>) -> Result<Self> {
        let recording_id = recording_id.into();
        for c in CRITERIA {
            match ratings.get(&c) {
                None => {
                    return Err(Error::Validation(format!(
                        "recording '{recording_id}' is missing the {c} rating"
                    )))
                }
                Some(&r) if !r.is_finite() || !(0.0..=1.0).contains(&r) => {
                    return Err(Error::Validation(format!(
                        "recording '{recording_id}': {c} rating {r} outside [0, 1]"
                    )))
                }
                _ => {}
            }
        }
        Ok(RatingRecord {
            recording_id,
            ratings,
        })
    }

    pub fn rating(&self, criterion: Criterion) -> f64 {
        self.ratings[&criterion]
    }
}

/// Normalize a raw rating by the scale maximum.
pub fn normalize_rating(raw: f64, max_rating: f64) -> Result<f64> {
    if !max_rating.is_finite() || max_rating <= 0.0 {
        return Err(Error::Validation(format!(
            "max rating must be positive, got {max_rating}"
        )));
    }
    if !raw.is_finite() || raw < 0.0 || raw > max_rating {
        return Err(Error::Validation(format!(
            "raw rating {raw} outside [0, {max_rating}]"
        )));
    }
    Ok(raw / max_rating)
}

/// Recording-level train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Shuffle ids with the seed's split stream and partition 8:1:1. Validation
/// and test each receive floor(n/10); train keeps the remainder.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if ids.len() < 10 {
        return Err(Error::Validation(format!(
            "need at least 10 recordings to split 8:1:1, got {}",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = stream_rng(seed, Stream::Split);
    shuffled.shuffle(&mut rng);
    let tenth = ids.len() / 10;
    let val_ids = shuffled[..tenth].to_vec();
    let test_ids = shuffled[tenth..2 * tenth].to_vec();
    let train_ids = shuffled[2 * tenth..].to_vec();
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        test_ids,
    })
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_recordings: usize,
    /// Contour length range in frames.
    pub min_len: usize,
    pub max_len: usize,
    /// Detuning range in semitones; each recording draws its pitch-error
    /// level uniformly from [pitch_jitter_min, pitch_jitter_max].
    pub pitch_jitter_min: f64,
    pub pitch_jitter_max: f64,
    /// Hesitation-gap level range; the realized unvoiced fraction tracks it.
    pub gap_level_min: f64,
    pub gap_level_max: f64,
    /// Number of discrete gap levels drawn from the range (0 = continuous).
    pub gap_level_steps: usize,
    /// Mean absolute pitch deviation (semitones) that drives note_accuracy
    /// to 0.
    pub d_max: f64,
    /// Unvoiced fraction that drives rhythm_accuracy to 0.
    pub g_max: f64,
    /// Std of the Gaussian noise added to each rating.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_recordings: 120,
            min_len: 600,
            max_len: 2500,
            pitch_jitter_min: 0.0,
            pitch_jitter_max: 2.2,
            gap_level_min: 0.0,
            gap_level_max: 0.12,
            gap_level_steps: 5,
            d_max: 2.0,
            g_max: 0.1,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_recordings == 0 {
            return Err(Error::Validation("n_recordings must be >= 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Validation(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if self.min_len < 64 {
            return Err(Error::Validation(
                "min_len must be >= 64 frames for a usable contour".into(),
            ));
        }
        if self.pitch_jitter_min < 0.0 || self.pitch_jitter_min > self.pitch_jitter_max {
            return Err(Error::Validation("invalid pitch jitter range".into()));
        }
        if self.gap_level_min < 0.0 || self.gap_level_min > self.gap_level_max {
            return Err(Error::Validation("invalid gap level range".into()));
        }
        if self.gap_level_max >= 0.9 {
            return Err(Error::Validation("gap level must stay below 0.9".into()));
        }
        if !self.d_max.is_finite() || self.d_max <= 0.0 || !self.g_max.is_finite() || self.g_max <= 0.0 {
            return Err(Error::Validation("d_max and g_max must be positive".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Validation("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// One note of the shared base melody.
#[derive(Debug, Clone, Copy)]
struct Note {
    midi: f64,
    frames: usize,
}

fn base_melody(rng: &mut impl Rng, total_frames: usize) -> Vec<Note> {
    let mut notes = Vec::new();
    let mut covered = 0usize;
    let mut pitch = 69i32;
    while covered < total_frames {
        let frames = rng.random_range(70..=160);
        let mut step = 0i32;
        while step == 0 {
            step = rng.random_range(-4..=4);
        }
        pitch = (pitch + step).clamp(60, 78);
        notes.push(Note {
            midi: pitch as f64,
            frames,
        });
        covered += frames;
    }
    notes
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Generate contours and matching rating records; bit-reproducible per spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<PitchContour>, Vec<RatingRecord>)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synth);
    let melody = base_melody(&mut rng, spec.max_len * 2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // One smoothed wobble shape shared by the whole dataset, unit mean
    // absolute value. Each recording scales it by its own error level, so
    // local roughness grows with the pitch error while contour distances
    // stay a clean function of the error-level differences.
    let wobble = {
        let len = spec.max_len;
        let raw: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let window = 5usize;
        let mut smooth = vec![0.0; len];
        for (t, out) in smooth.iter_mut().enumerate() {
            let lo = t.saturating_sub(window / 2);
            let hi = (t + window / 2 + 1).min(len);
            *out = raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
        let mean_abs = smooth.iter().map(|w| w.abs()).sum::<f64>() / len as f64;
        if mean_abs > 0.0 {
            for w in smooth.iter_mut() {
                *w /= mean_abs;
            }
        }
        smooth
    };

    let mut contours = Vec::with_capacity(spec.n_recordings);
    let mut records = Vec::with_capacity(spec.n_recordings);
    let width = (spec.n_recordings.max(2) - 1).to_string().len().max(4);

    for idx in 0..spec.n_recordings {
        let recording_id = format!("synth_{idx:0width$}");
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let detune_level = rng.random_range(spec.pitch_jitter_min..=spec.pitch_jitter_max);
        let detune_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let gap_level = {
            let raw = rng.random_range(spec.gap_level_min..=spec.gap_level_max);
            let span = spec.gap_level_max - spec.gap_level_min;
            if spec.gap_level_steps >= 2 && span > 0.0 {
                // Snap to one of the discrete hesitation levels.
                let steps = (spec.gap_level_steps - 1) as f64;
                let frac = ((raw - spec.gap_level_min) / span * steps).round() / steps;
                spec.gap_level_min + frac * span
            } else {
                raw
            }
        };

        // Assemble frames note by note. Hesitation gaps replace the tail of
        // each note rather than delaying it, so the melody stays phase-
        // aligned across recordings and the realized unvoiced fraction
        // tracks gap_level directly. Alignment is what makes the ratings
        // recoverable from raw contour distances (the sanity oracle below).
        let mut values = Vec::with_capacity(len);
        let mut deviation_sum = 0.0;
        let mut voiced = 0usize;
        'fill: for note in melody.iter().cycle() {
            let frames = note.frames.max(2);
            let gap_frames = ((frames as f64 * gap_level).round() as usize).min(frames - 1);
            for t in 0..frames {
                if values.len() >= len {
                    break 'fill;
                }
                if t >= frames - gap_frames {
                    values.push(0.0);
                    continue;
                }
                let dev = detune_level * (detune_sign + 1.0 * wobble[values.len()]);
                deviation_sum += dev.abs();
                voiced += 1;
                let midi = (note.midi + dev).clamp(0.0, MIDI_MAX);
                values.push(midi / MIDI_MAX);
            }
        }

        let mean_abs_dev = if voiced > 0 {
            deviation_sum / voiced as f64
        } else {
            0.0
        };
        let unvoiced_fraction = (len - voiced) as f64 / len as f64;

        let note_accuracy = 1.0 - clamp01(mean_abs_dev / spec.d_max);
        let rhythm_accuracy = 1.0 - clamp01(unvoiced_fraction / spec.g_max);
        let musicality = 0.5 * (note_accuracy + rhythm_accuracy);

        let mut ratings = BTreeMap::new();
        for (criterion, value) in [
            (Criterion::Musicality, musicality),
            (Criterion::NoteAccuracy, note_accuracy),
            (Criterion::RhythmAccuracy, rhythm_accuracy),
        ] {
            let noisy = if spec.noise_std > 0.0 {
                value + spec.noise_std * normal.sample(&mut rng)
            } else {
                value
            };
            ratings.insert(criterion, clamp01(noisy));
        }

        contours.push(PitchContour::new(recording_id.clone(), values)?);
        records.push(RatingRecord::new(recording_id, ratings)?);
    }
    Ok((contours, records))
}

/// A fully loaded corpus: contour and ratings per recording, manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub entries: Vec<(PitchContour, RatingRecord)>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|(c, _)| c.recording_id.clone())
            .collect()
    }

    pub fn get(&self, recording_id: &str) -> Option<&(PitchContour, RatingRecord)> {
        self.entries
            .iter()
            .find(|(c, _)| c.recording_id == recording_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One manifest row: id, f0 path (relative to the manifest), three ratings
/// and an optional max_rating column that triggers normalization.
#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub recording_id: String,
    pub f0_path: PathBuf,
    pub record: RatingRecord,
}

/// Read a manifest CSV; header row required.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["recording_id", "f0_path", "musicality", "note_accuracy", "rhythm_accuracy"];
    let mut columns: Vec<&str> = headers.iter().collect();
    let has_max = columns.last() == Some(&"max_rating");
    if has_max {
        columns.pop();
    }
    if columns != expected {
        return Err(Error::Parse(format!(
            "{}: manifest header must be {:?} with optional trailing max_rating, got {:?}",
            path.display(),
            expected,
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rows = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let record = result.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let field = |j: usize| -> Result<&str> {
            record.get(j).ok_or_else(|| {
                Error::Parse(format!(
                    "{} row {}: missing column {}",
                    path.display(),
                    i + 2,
                    j
                ))
            })
        };
        let recording_id = field(0)?.to_string();
        let f0_path = base.join(field(1)?);
        let parse = |j: usize| -> Result<f64> {
            field(j)?.parse().map_err(|_| {
                Error::Parse(format!(
                    "{} row {}: '{}' is not a number",
                    path.display(),
                    i + 2,
                    record.get(j).unwrap_or("")
                ))
            })
        };
        let mut values = [parse(2)?, parse(3)?, parse(4)?];
        if has_max {
            let max_rating = parse(5)?;
            for v in values.iter_mut() {
                *v = normalize_rating(*v, max_rating)?;
            }
        }
        let mut ratings = BTreeMap::new();
        ratings.insert(Criterion::Musicality, values[0]);
        ratings.insert(Criterion::NoteAccuracy, values[1]);
        ratings.insert(Criterion::RhythmAccuracy, values[2]);
        rows.push(ManifestRow {
            recording_id: recording_id.clone(),
            f0_path,
            record: RatingRecord::new(recording_id, ratings)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "{}: manifest lists no recordings",
            path.display()
        )));
    }
    Ok(rows)
}

/// Load the full corpus behind a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let rows = load_manifest(manifest_path)?;
    let mut entries = Vec::with_capacity(rows.len());
    for row in rows {
        let track = crate::contour::load_f0_file(&row.f0_path)?;
        if track.recording_id != row.recording_id {
            // The manifest id wins; files may be shared or renamed.
            let mut track = track;
            track.recording_id = row.recording_id.clone();
            let mut contour = crate::contour::track_to_contour(&track)?;
            contour.recording_id = row.recording_id.clone();
            entries.push((contour, row.record));
        } else {
            entries.push((crate::contour::track_to_contour(&track)?, row.record));
        }
    }
    Ok(Dataset { entries })
}

/// Write a dataset as f0 files plus a manifest under `dir`.
pub fn write_dataset(
    dir: &Path,
    contours: &[PitchContour],
    records: &[RatingRecord],
) -> Result<PathBuf> {
    if contours.len() != records.len() {
        return Err(Error::Validation(format!(
            "{} contours vs {} rating records",
            contours.len(),
            records.len()
        )));
    }
    let f0_dir = dir.join("f0");
    std::fs::create_dir_all(&f0_dir).map_err(|e| Error::io(&f0_dir, e))?;
    let mut manifest = String::from("recording_id,f0_path,musicality,note_accuracy,rhythm_accuracy\n");
    for (contour, record) in contours.iter().zip(records) {
        let rel = format!("f0/{}.f0", contour.recording_id);
        let f0_path = dir.join(&rel);
        let mut body = String::with_capacity(contour.len() * 8);
        for &v in &contour.values {
            let hz = normalized_midi_to_hz(v);
            body.push_str(&format!("{hz}\n"));
        }
        crate::report::write_atomic(&f0_path, body.as_bytes())?;
        manifest.push_str(&format!(
            "{},{},{},{},{}\n",
            contour.recording_id,
            rel,
            record.rating(Criterion::Musicality),
            record.rating(Criterion::NoteAccuracy),
            record.rating(Criterion::RhythmAccuracy),
        ));
    }
    let manifest_path = dir.join("manifest.csv");
    crate::report::write_atomic(&manifest_path, manifest.as_bytes())?;
    Ok(manifest_path)
}
