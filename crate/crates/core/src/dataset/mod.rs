//! Trial storage, manifest handling, and questionnaire-derived labels.
//!
//! On-disk layout under a dataset root:
//!
//! ```text
//! <root>/
//!   manifest.json     # subjects, trials, scores, file paths
//!   channels.json     # ordered list of 64 electrode labels
//!   sub00/trial00.f32 # raw little-endian f32, channel-major
//!   ...
//! ```
//!
//! Trial payloads are little-endian 32-bit floats, channel-major (channel 0
//! samples 0..n-1, then channel 1, ...). Labels are derived per subject:
//! the three Likert scores are weighted-averaged per trial, and a trial is
//! "trust" when its score is at or above the subject's median trial score.

pub mod synth;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial;

/// Robot ability condition carried as trial metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotAbility {
    HAR,
    MAR,
    LAR,
}

/// Per-trial metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub subject_id: String,
    pub trial_index: u32,
    pub layout: u8,
    pub robot_ability: RobotAbility,
    /// Three 5-point Likert scores from the post-trial questionnaire.
    pub scores: [u8; 3],
    pub sample_rate_hz: f64,
}

impl TrialMeta {
    pub fn validate(&self) -> Result<()> {
        if self.trial_index > 29 {
            return Err(Error::invalid(format!(
                "subject {} trial_index {} out of range 0..29",
                self.subject_id, self.trial_index
            )));
        }
        if !(1..=5).contains(&self.layout) {
            return Err(Error::invalid(format!(
                "subject {} trial {}: layout {} out of range 1..5",
                self.subject_id, self.trial_index, self.layout
            )));
        }
        for (i, s) in self.scores.iter().enumerate() {
            if !(1..=5).contains(s) {
                return Err(Error::invalid(format!(
                    "subject {} trial {}: scores[{}] = {} out of range 1..5",
                    self.subject_id, self.trial_index, i, s
                )));
            }
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::invalid(format!(
                "subject {} trial {}: sample_rate_hz must be positive",
                self.subject_id, self.trial_index
            )));
        }
        Ok(())
    }
}

/// One trial's multichannel time series, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub meta: TrialMeta,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Channel-major: `data[c * n_samples + t]`, microvolts.
    pub data: Vec<f64>,
    pub channel_names: Vec<String>,
}

impl RawRecording {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }
}

/// Manifest entry for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub meta: TrialMeta,
    /// Path relative to the dataset root.
    pub file: PathBuf,
    pub n_channels: usize,
    pub n_samples: usize,
}

/// Validated dataset manifest; entries sorted by (subject, trial).
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub format_version: String,
    pub provenance: Option<serde_json::Value>,
    pub entries: Vec<ManifestEntry>,
    pub channel_names: Vec<String>,
}

// --- JSON schema -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestJson {
    format_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    subjects: Vec<SubjectJson>,
}

#[derive(Serialize, Deserialize)]
struct SubjectJson {
    subject_id: String,
    trials: Vec<TrialJson>,
}

#[derive(Serialize, Deserialize)]
struct TrialJson {
    trial_index: u32,
    layout: u8,
    robot_ability: RobotAbility,
    scores: [u8; 3],
    file: String,
    n_channels: usize,
    n_samples: usize,
    sample_rate_hz: f64,
}

/// Loads and validates `manifest.json` and `channels.json` under `root`.
/// Entries come back sorted by subject id then trial index.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let manifest_path = root.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(&manifest_path, e))?;
    let parsed: ManifestJson = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&manifest_path, e.to_string()))?;

    let channel_names = load_channels(root)?;

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for subject in parsed.subjects {
        for trial in subject.trials {
            let meta = TrialMeta {
                subject_id: subject.subject_id.clone(),
                trial_index: trial.trial_index,
                layout: trial.layout,
                robot_ability: trial.robot_ability,
                scores: trial.scores,
                sample_rate_hz: trial.sample_rate_hz,
            };
            meta.validate()?;
            if !seen.insert((meta.subject_id.clone(), meta.trial_index)) {
                return Err(Error::invalid(format!(
                    "duplicate trial identity: subject {} trial {}",
                    meta.subject_id, meta.trial_index
                )));
            }
            let file = PathBuf::from(&trial.file);
            let full = root.join(&file);
            if !full.is_file() {
                return Err(Error::invalid(format!(
                    "trial file missing: {}",
                    full.display()
                )));
            }
            entries.push(ManifestEntry {
                meta,
                file,
                n_channels: trial.n_channels,
                n_samples: trial.n_samples,
            });
        }
    }
    entries.sort_by(|a, b| {
        (&a.meta.subject_id, a.meta.trial_index).cmp(&(&b.meta.subject_id, b.meta.trial_index))
    });
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        format_version: parsed.format_version,
        provenance: parsed.provenance,
        entries,
        channel_names,
    })
}

/// Writes `manifest.json` for the given entries (grouped by subject, sorted).
pub fn write_manifest(
    root: &Path,
    entries: &[ManifestEntry],
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.meta.subject_id, a.meta.trial_index).cmp(&(&b.meta.subject_id, b.meta.trial_index))
    });
    let mut subjects: Vec<SubjectJson> = Vec::new();
    for e in sorted {
        let trial = TrialJson {
            trial_index: e.meta.trial_index,
            layout: e.meta.layout,
            robot_ability: e.meta.robot_ability,
            scores: e.meta.scores,
            file: e.file.to_string_lossy().into_owned(),
            n_channels: e.n_channels,
            n_samples: e.n_samples,
            sample_rate_hz: e.meta.sample_rate_hz,
        };
        match subjects.last_mut() {
            Some(s) if s.subject_id == e.meta.subject_id => s.trials.push(trial),
            _ => subjects.push(SubjectJson {
                subject_id: e.meta.subject_id.clone(),
                trials: vec![trial],
            }),
        }
    }
    let manifest = ManifestJson {
        format_version: "1.0".to_string(),
        provenance,
        subjects,
    };
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads `channels.json`: the ordered electrode labels for this root.
pub fn load_channels(root: &Path) -> Result<Vec<String>> {
    let path = root.join("channels.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let names: Vec<String> =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    let map = spatial::build_map();
    let mut seen = HashSet::new();
    for n in &names {
        if map.lookup(n).is_none() {
            return Err(Error::parse(
                &path,
                format!("channel \"{n}\" not in the electrode map"),
            ));
        }
        if !seen.insert(n.clone()) {
            return Err(Error::parse(&path, format!("duplicate channel \"{n}\"")));
        }
    }
    if names.len() != spatial::N_CHANNELS {
        return Err(Error::parse(
            &path,
            format!("expected {} channels, found {}", spatial::N_CHANNELS, names.len()),
        ));
    }
    Ok(names)
}

pub fn write_channels(root: &Path, names: &[String]) -> Result<()> {
    let path = root.join("channels.json");
    let text = serde_json::to_string_pretty(names)
        .map_err(|e| Error::parse(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads one trial's payload and validates shape and finiteness.
pub fn load_trial(
    manifest: &DatasetManifest,
    subject_id: &str,
    trial_index: u32,
) -> Result<RawRecording> {
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.meta.subject_id == subject_id && e.meta.trial_index == trial_index)
        .ok_or_else(|| {
            Error::invalid(format!(
                "no manifest entry for subject {subject_id} trial {trial_index}"
            ))
        })?;
    if entry.n_channels != spatial::N_CHANNELS {
        return Err(Error::shape(format!(
            "subject {subject_id} trial {trial_index}: n_channels {} != {}",
            entry.n_channels,
            spatial::N_CHANNELS
        )));
    }
    let path = manifest.root.join(&entry.file);
    let mut file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
    let expected = entry.n_channels * entry.n_samples * 4;
    if bytes.len() != expected {
        return Err(Error::shape(format!(
            "shape mismatch in {}: {} bytes, expected {} ({} channels x {} samples x 4)",
            path.display(),
            bytes.len(),
            expected,
            entry.n_channels,
            entry.n_samples
        )));
    }
    let mut data = Vec::with_capacity(entry.n_channels * entry.n_samples);
    for chunk in bytes.chunks_exact(4) {
        data.push(f64::from(f32::from_le_bytes([
            chunk[0], chunk[1], chunk[2], chunk[3],
        ])));
    }
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite sample in {}: channel {} sample {}",
                path.display(),
                i / entry.n_samples,
                i % entry.n_samples
            )));
        }
    }
    Ok(RawRecording {
        meta: entry.meta.clone(),
        n_channels: entry.n_channels,
        n_samples: entry.n_samples,
        data,
        channel_names: manifest.channel_names.clone(),
    })
}

/// Writes one trial payload as little-endian f32, channel-major. Returns the
/// root-relative path.
pub fn write_trial(root: &Path, rec: &RawRecording) -> Result<PathBuf> {
    let rel = trial_rel_path(&rec.meta.subject_id, rec.meta.trial_index);
    let path = root.join(&rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(rec.data.len() * 4);
    for v in &rec.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
    Ok(rel)
}

fn trial_rel_path(subject_id: &str, trial_index: u32) -> PathBuf {
    PathBuf::from(subject_id).join(format!("trial{trial_index:02}.f32"))
}

// --- Labels ----------------------------------------------------------------

/// Identity and label of one 1-second slice; the payload lives elsewhere
/// (row `payload_row` of a feature table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSlice {
    pub subject_id: String,
    pub trial_index: u32,
    pub slice_index: u32,
    pub label: u8,
    pub payload_row: usize,
}

/// Weighted question score and threshold rule: label 1 (trust) iff the
/// weighted score is at or above the threshold.
pub fn label_from_scores(scores: [u8; 3], weights: [f64; 3], threshold: f64) -> Result<(f64, u8)> {
    for (i, s) in scores.iter().enumerate() {
        if !(1..=5).contains(s) {
            return Err(Error::invalid(format!(
                "scores[{i}] = {s} out of range 1..5"
            )));
        }
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::invalid("weights must be nonnegative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "weights sum to {sum}, expected 1 within 1e-9"
        )));
    }
    let score: f64 = scores
        .iter()
        .zip(weights.iter())
        .map(|(&s, &w)| f64::from(s) * w)
        .sum();
    Ok((score, u8::from(score >= threshold)))
}

/// Per-subject threshold and degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectThreshold {
    pub threshold: f64,
    /// True when all trial scores are equal, so every trial gets label 1.
    pub degenerate: bool,
}

/// Median of the subject's trial scores (mean of middle two for even
/// counts). Under the >= rule this gives the most balanced achievable split.
pub fn subject_threshold(trial_scores: &[f64]) -> Result<SubjectThreshold> {
    if trial_scores.len() < 2 {
        return Err(Error::invalid(
            "subject_threshold needs at least 2 trial scores",
        ));
    }
    let mut sorted = trial_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let n = sorted.len();
    let threshold = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let degenerate = sorted.first() == sorted.last();
    Ok(SubjectThreshold {
        threshold,
        degenerate,
    })
}

/// Labels for all trials of one subject: weighted scores, median threshold,
/// and the resulting binary labels, in the order given.
pub fn derive_subject_labels(
    scores: &[[u8; 3]],
    weights: [f64; 3],
) -> Result<(SubjectThreshold, Vec<f64>, Vec<u8>)> {
    let trial_scores: Vec<f64> = scores
        .iter()
        .map(|s| label_from_scores(*s, weights, 0.0).map(|(score, _)| score))
        .collect::<Result<_>>()?;
    let thr = subject_threshold(&trial_scores)?;
    let labels = trial_scores
        .iter()
        .map(|&s| u8::from(s >= thr.threshold))
        .collect();
    Ok((thr, trial_scores, labels))
}
