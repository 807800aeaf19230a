//! Differential-entropy features.
//!
//! Each 1-second slice is Hanning-windowed, zero-padded to 512 points, and
//! transformed to a one-sided power spectral density. Band variance is the
//! PSD integrated over a band, and the differential entropy of a Gaussian
//! band-limited signal is `0.5 * ln(2 pi e sigma^2)` in nats.
//!
//! Normalization: the PSD divides by the window energy `sum(w^2)` and the
//! sample rate, and doubles non-DC/non-Nyquist bins, so integrating the PSD
//! over all frequencies equals the windowed-signal power
//! `sum((x w)^2) / sum(w^2)` exactly. Band variance therefore reads as the
//! time-domain variance of the band-limited component.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::EpochedTrial;

/// FFT length for slice spectra.
pub const FFT_LEN: usize = 512;

/// Variance floor applied before the logarithm; hits are counted and
/// surfaced by the extractor.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Conventional EEG band names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

/// A frequency band `[low_hz, high_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDef {
    pub name: BandName,
    pub low_hz: f64,
    pub high_hz: f64,
}

pub const DELTA: BandDef = BandDef {
    name: BandName::Delta,
    low_hz: 1.0,
    high_hz: 3.0,
};
pub const THETA: BandDef = BandDef {
    name: BandName::Theta,
    low_hz: 4.0,
    high_hz: 7.0,
};
pub const ALPHA: BandDef = BandDef {
    name: BandName::Alpha,
    low_hz: 8.0,
    high_hz: 13.0,
};
pub const BETA: BandDef = BandDef {
    name: BandName::Beta,
    low_hz: 14.0,
    high_hz: 30.0,
};
pub const GAMMA: BandDef = BandDef {
    name: BandName::Gamma,
    low_hz: 31.0,
    high_hz: 50.0,
};

/// The four bands used as features, in fixed order.
pub const FEATURE_BANDS: [BandDef; 4] = [THETA, ALPHA, BETA, GAMMA];

/// Number of feature bands.
pub const N_BANDS: usize = FEATURE_BANDS.len();

/// One-sided power spectral density of one slice channel.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// PSD per bin, bins `0..=FFT_LEN/2`, units of power per Hz.
    pub psd: Vec<f64>,
    /// Bin spacing in Hz.
    pub freq_step: f64,
}

impl Spectrum {
    pub fn freq(&self, bin: usize) -> f64 {
        bin as f64 * self.freq_step
    }
}

/// Reusable analyzer holding the window and FFT plan for one sample rate.
pub struct SpectrumAnalyzer {
    sample_rate_hz: f64,
    window: Vec<f64>,
    window_energy: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(sample_rate_hz: f64) -> Self {
        let n = sample_rate_hz.round() as usize;
        let window = hanning(n);
        let window_energy = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(FFT_LEN);
        SpectrumAnalyzer {
            sample_rate_hz,
            window,
            window_energy,
            fft,
        }
    }

    /// Windowed, zero-padded, one-sided PSD of a single 1-second window.
    pub fn power_spectrum(&self, samples: &[f64]) -> Result<Spectrum> {
        let n = self.window.len();
        if samples.len() != n {
            return Err(Error::shape(format!(
                "expected {} samples (one second at {} Hz), got {}",
                n,
                self.sample_rate_hz,
                samples.len()
            )));
        }
        let mut buf: Vec<Complex<f64>> = Vec::with_capacity(FFT_LEN);
        for (x, w) in samples.iter().zip(&self.window) {
            buf.push(Complex::new(x * w, 0.0));
        }
        buf.resize(FFT_LEN, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);

        let half = FFT_LEN / 2;
        let norm = 1.0 / (self.sample_rate_hz * self.window_energy);
        let mut psd = Vec::with_capacity(half + 1);
        for (k, value) in buf.iter().take(half + 1).enumerate() {
            let doubling = if k == 0 || k == half { 1.0 } else { 2.0 };
            psd.push(doubling * value.norm_sqr() * norm);
        }
        Ok(Spectrum {
            psd,
            freq_step: self.sample_rate_hz / FFT_LEN as f64,
        })
    }
}

/// Symmetric Hanning window of length `n`.
fn hanning(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos())
        })
        .collect()
}

/// Convenience wrapper building a one-shot analyzer at 250 Hz.
pub fn power_spectrum_512(samples: &[f64]) -> Result<Spectrum> {
    SpectrumAnalyzer::new(250.0).power_spectrum(samples)
}

/// Integrates the PSD over `[low_hz, high_hz)`. Errors when no bin falls in
/// the band or the band exceeds Nyquist.
pub fn band_variance(spectrum: &Spectrum, band: &BandDef) -> Result<f64> {
    let nyquist = spectrum.freq_step * (spectrum.psd.len() - 1) as f64;
    if band.low_hz >= band.high_hz || band.high_hz > nyquist + 1e-9 {
        return Err(Error::invalid(format!(
            "band {:?} [{}, {}) invalid for Nyquist {}",
            band.name, band.low_hz, band.high_hz, nyquist
        )));
    }
    let mut acc = 0.0;
    let mut bins = 0usize;
    for (k, p) in spectrum.psd.iter().enumerate() {
        let f = spectrum.freq(k);
        if f >= band.low_hz && f < band.high_hz {
            acc += p * spectrum.freq_step;
            bins += 1;
        }
    }
    if bins == 0 {
        return Err(Error::invalid(format!(
            "band {:?} [{}, {}) contains no spectral bins",
            band.name, band.low_hz, band.high_hz
        )));
    }
    Ok(acc)
}

/// Differential entropy of a Gaussian with the given variance, in nats.
/// Nonpositive or tiny variances clamp to [`VARIANCE_FLOOR`].
pub fn de_gaussian(sigma_sq: f64) -> f64 {
    let s = sigma_sq.max(VARIANCE_FLOOR);
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s).ln()
}

/// Per-slice differential-entropy features: `[n_channels x N_BANDS]`,
/// bands ordered (theta, alpha, beta, gamma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeSlice {
    pub subject_id: String,
    pub trial_index: u32,
    pub slice_index: u32,
    pub label: u8,
    /// Row-major `[channel][band]`.
    pub features: Vec<f64>,
}

/// Extraction result plus the count of variance-floor clamps.
#[derive(Debug, Clone)]
pub struct DeExtraction {
    pub slices: Vec<DeSlice>,
    pub floored: usize,
}

/// Extracts DE features for every slice and channel of an epoched trial.
/// The label is filled in by the caller (it is trial-level metadata).
pub fn extract_de(trial: &EpochedTrial, bands: &[BandDef], label: u8) -> Result<DeExtraction> {
    let analyzer = SpectrumAnalyzer::new(trial.meta.sample_rate_hz);
    let mut slices = Vec::with_capacity(trial.slices.len());
    let mut floored = 0usize;
    for (s, _) in trial.slices.iter().enumerate() {
        let mut features = vec![0.0; trial.n_channels * bands.len()];
        for c in 0..trial.n_channels {
            let spectrum = analyzer.power_spectrum(trial.slice_channel(s, c))?;
            for (b, band) in bands.iter().enumerate() {
                let var = band_variance(&spectrum, band)?;
                if var < VARIANCE_FLOOR {
                    floored += 1;
                }
                features[c * bands.len() + b] = de_gaussian(var);
            }
        }
        slices.push(DeSlice {
            subject_id: trial.meta.subject_id.clone(),
            trial_index: trial.meta.trial_index,
            slice_index: s as u32,
            label,
            features,
        });
    }
    Ok(DeExtraction { slices, floored })
}

/// A flat table of extracted DE features for a whole dataset: the binary
/// payload holds one little-endian f32 row per slice; the JSON index
/// alongside carries identities, labels, and extraction provenance.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub channel_names: Vec<String>,
    pub bands: Vec<BandDef>,
    pub label_weights: [f64; 3],
    pub subject_thresholds: std::collections::BTreeMap<String, f64>,
    pub floored: usize,
    pub provenance: Option<serde_json::Value>,
    pub slices: Vec<DeSlice>,
}

#[derive(Serialize, Deserialize)]
struct FeatureIndexJson {
    format_version: String,
    channels: Vec<String>,
    bands: Vec<BandDef>,
    label_weights: [f64; 3],
    subject_thresholds: std::collections::BTreeMap<String, f64>,
    floored: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    slices: Vec<crate::dataset::LabeledSlice>,
}

impl FeatureTable {
    pub fn feature_dim(&self) -> usize {
        self.channel_names.len() * self.bands.len()
    }

    /// Index path next to the binary payload (`features.bin` ->
    /// `features.json`).
    pub fn index_path(bin: &std::path::Path) -> std::path::PathBuf {
        bin.with_extension("json")
    }

    /// Sorted unique subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .slices
            .iter()
            .map(|s| s.subject_id.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Row indices belonging to one subject, in table order.
    pub fn rows_for_subject(&self, subject_id: &str) -> Vec<usize> {
        self.slices
            .iter()
            .enumerate()
            .filter(|(_, s)| s.subject_id == subject_id)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn save(&self, bin: &std::path::Path) -> Result<()> {
        let dim = self.feature_dim();
        let mut bytes = Vec::with_capacity(self.slices.len() * dim * 4);
        for s in &self.slices {
            if s.features.len() != dim {
                return Err(Error::shape(format!(
                    "slice {}:{}:{} has {} features, expected {dim}",
                    s.subject_id,
                    s.trial_index,
                    s.slice_index,
                    s.features.len()
                )));
            }
            for v in &s.features {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        std::fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
        let index = FeatureIndexJson {
            format_version: "1.0".to_string(),
            channels: self.channel_names.clone(),
            bands: self.bands.clone(),
            label_weights: self.label_weights,
            subject_thresholds: self.subject_thresholds.clone(),
            floored: self.floored,
            provenance: self.provenance.clone(),
            slices: self
                .slices
                .iter()
                .enumerate()
                .map(|(i, s)| crate::dataset::LabeledSlice {
                    subject_id: s.subject_id.clone(),
                    trial_index: s.trial_index,
                    slice_index: s.slice_index,
                    label: s.label,
                    payload_row: i,
                })
                .collect(),
        };
        let index_path = Self::index_path(bin);
        let text = serde_json::to_string_pretty(&index)
            .map_err(|e| Error::parse(&index_path, e.to_string()))?;
        std::fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))
    }

    pub fn load(bin: &std::path::Path) -> Result<FeatureTable> {
        let index_path = Self::index_path(bin);
        if !bin.is_file() {
            return Err(Error::invalid(format!(
                "features not found at {}",
                bin.display()
            )));
        }
        let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: FeatureIndexJson =
            serde_json::from_str(&text).map_err(|e| Error::parse(&index_path, e.to_string()))?;
        let bytes = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let dim = index.channels.len() * index.bands.len();
        if bytes.len() != index.slices.len() * dim * 4 {
            return Err(Error::shape(format!(
                "feature payload {} bytes, expected {} ({} slices x {dim} x 4)",
                bytes.len(),
                index.slices.len() * dim * 4,
                index.slices.len()
            )));
        }
        let mut slices = Vec::with_capacity(index.slices.len());
        for entry in &index.slices {
            let offset = entry.payload_row * dim * 4;
            let mut features = Vec::with_capacity(dim);
            for chunk in bytes[offset..offset + dim * 4].chunks_exact(4) {
                features.push(f64::from(f32::from_le_bytes([
                    chunk[0], chunk[1], chunk[2], chunk[3],
                ])));
            }
            slices.push(DeSlice {
                subject_id: entry.subject_id.clone(),
                trial_index: entry.trial_index,
                slice_index: entry.slice_index,
                label: entry.label,
                features,
            });
        }
        Ok(FeatureTable {
            channel_names: index.channels,
            bands: index.bands,
            label_weights: index.label_weights,
            subject_thresholds: index.subject_thresholds,
            floored: index.floored,
            provenance: index.provenance,
            slices,
        })
    }
}
