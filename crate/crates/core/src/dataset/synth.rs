//! Deterministic synthetic dataset generator.
//!
//! Signals are sums of band-limited Gaussian noise built in the frequency
//! domain, so every band's time-domain variance is controlled exactly and
//! the Gaussian differential-entropy closed form applies. Class structure
//! enters as per-band variance multipliers for the trust class, optionally
//! restricted to electrodes selected by a 9x9 spatial mask. A per-trial
//! shared offset waveform (amplitude `sigma_trial`) is added to every slice
//! of a trial, which correlates slices within a trial without touching the
//! class structure.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::config::seeded_rng;
use crate::dataset::{
    write_channels, write_manifest, write_trial, ManifestEntry, RawRecording, RobotAbility,
    TrialMeta,
};
use crate::error::{Error, Result};
use crate::features::{FEATURE_BANDS, N_BANDS};
use crate::spatial;

/// Declarative synthetic-dataset recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub trial_seconds: f64,
    pub sample_rate_hz: f64,
    /// Base per-band variance for both classes, order (theta, alpha, beta,
    /// gamma).
    pub band_sigma_sq: [f64; N_BANDS],
    /// Variance multipliers applied to the trust class.
    pub trust_band_multipliers: [f64; N_BANDS],
    /// Optional 9x9 mask scaling the class effect per electrode position
    /// (1 = full effect, 0 = none). `None` applies the effect everywhere.
    pub spatial_mask: Option<Vec<Vec<f64>>>,
    /// Relative amplitude of the shared per-trial offset waveform.
    pub sigma_trial: f64,
    /// Synthesis margin inside each band edge, so analysis leakage stays
    /// in-band.
    pub band_margin_hz: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            trial_seconds: 10.0,
            sample_rate_hz: 250.0,
            band_sigma_sq: [1.0; N_BANDS],
            trust_band_multipliers: [1.0; N_BANDS],
            spatial_mask: None,
            sigma_trial: 0.0,
            band_margin_hz: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trial_seconds < 1.0 {
            return Err(Error::invalid("trial_seconds must be at least 1"));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::invalid("sample_rate_hz must be positive"));
        }
        if let Some(mask) = &self.spatial_mask {
            if mask.len() != spatial::GRID_SIZE
                || mask.iter().any(|row| row.len() != spatial::GRID_SIZE)
            {
                return Err(Error::invalid("spatial_mask must be 9x9"));
            }
        }
        if self.sigma_trial < 0.0 {
            return Err(Error::invalid("sigma_trial must be nonnegative"));
        }
        Ok(())
    }

    fn mask_value(&self, row: usize, col: usize) -> f64 {
        match &self.spatial_mask {
            Some(mask) => mask[row][col],
            None => 1.0,
        }
    }

    /// Per-band variance for one channel under a given label.
    fn channel_variance(&self, band: usize, mask: f64, label: u8) -> f64 {
        let base = self.band_sigma_sq[band];
        if label == 1 {
            base * (1.0 + (self.trust_band_multipliers[band] - 1.0) * mask)
        } else {
            base
        }
    }
}

/// Named recipes used by the CLI and the verification suite.
pub fn preset(name: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    match name {
        // labels independent of the data
        "null" => {}
        // large broadband class effect on every electrode
        "strong" => {
            spec.trust_band_multipliers = [1.0, 4.0, 4.0, 1.0];
        }
        // moderate class effect plus strong shared per-trial offsets
        "trial-noise" => {
            spec.trust_band_multipliers = [1.0, 1.6, 1.0, 1.0];
            spec.sigma_trial = 0.8;
        }
        // class effect confined to a 3x3 electrode neighborhood
        "spatial" => {
            spec.trust_band_multipliers = [1.0, 2.2, 1.0, 1.0];
            let mut mask = vec![vec![0.0; spatial::GRID_SIZE]; spatial::GRID_SIZE];
            for row in mask.iter_mut().take(6).skip(3) {
                for cell in row.iter_mut().take(6).skip(3) {
                    *cell = 1.0;
                }
            }
            spec.spatial_mask = Some(mask);
        }
        // class effect on a single electrode (CZ)
        "single-channel" => {
            spec.trust_band_multipliers = [1.0, 6.0, 6.0, 1.0];
            let mut mask = vec![vec![0.0; spatial::GRID_SIZE]; spatial::GRID_SIZE];
            mask[4][4] = 1.0;
            spec.spatial_mask = Some(mask);
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown synth preset \"{other}\" (null, strong, trial-noise, spatial, single-channel)"
            )))
        }
    }
    Ok(spec)
}

/// Intended label for a trial index: alternating, so classes stay balanced
/// and the median-threshold rule reproduces them exactly.
pub fn intended_label(trial_index: u32) -> u8 {
    (trial_index % 2) as u8
}

/// Generates `n_subjects x n_trials` trials under `root`, writing the
/// manifest, channel order, and payload files. Deterministic in `seed`.
pub fn synth_generate(
    root: &Path,
    seed: u64,
    n_subjects: usize,
    n_trials: usize,
    spec: &SynthSpec,
) -> Result<()> {
    spec.validate()?;
    if n_subjects == 0 {
        return Err(Error::invalid("need at least one subject"));
    }
    if n_trials < 2 || n_trials % 2 != 0 || n_trials > 30 {
        return Err(Error::invalid(
            "n_trials per subject must be even, between 2 and 30",
        ));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let map = spatial::build_map();
    let channel_names = map.channel_order();
    write_channels(root, &channel_names)?;
    // grid position per channel, for the mask
    let positions: Vec<(usize, usize)> = channel_names
        .iter()
        .map(|n| map.lookup(n).expect("canonical order is mapped"))
        .collect();

    let n_samples = (spec.trial_seconds * spec.sample_rate_hz).round() as usize;
    let slice_len = spec.sample_rate_hz.round() as usize;

    let mut entries = Vec::new();
    for s in 0..n_subjects {
        let subject_id = format!("sub{s:02}");
        for t in 0..n_trials {
            let label = intended_label(t as u32);
            let scores = if label == 1 { [4, 4, 4] } else { [2, 2, 2] };
            let meta = TrialMeta {
                subject_id: subject_id.clone(),
                trial_index: t as u32,
                layout: ((t / 6) % 5) as u8 + 1,
                robot_ability: match (t / 2) % 3 {
                    0 => RobotAbility::HAR,
                    1 => RobotAbility::MAR,
                    _ => RobotAbility::LAR,
                },
                scores,
                sample_rate_hz: spec.sample_rate_hz,
            };
            let mut rng = seeded_rng(seed, "synth", &[s as u64, t as u64]);
            let data = synth_trial(spec, &positions, label, n_samples, slice_len, &mut rng)?;
            let rec = RawRecording {
                meta: meta.clone(),
                n_channels: channel_names.len(),
                n_samples,
                data,
                channel_names: channel_names.clone(),
            };
            let rel = write_trial(root, &rec)?;
            entries.push(ManifestEntry {
                meta,
                file: rel,
                n_channels: rec.n_channels,
                n_samples,
            });
        }
    }
    let provenance = serde_json::json!({
        "generator": "synth",
        "seed": seed,
        "spec": spec,
    });
    write_manifest(root, &entries, Some(provenance))
}

/// One trial's channel-major waveform.
fn synth_trial(
    spec: &SynthSpec,
    positions: &[(usize, usize)],
    label: u8,
    n_samples: usize,
    slice_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n_channels = positions.len();
    let mut planner = FftPlanner::new();
    let trial_ifft = planner.plan_fft_inverse(n_samples);
    let offset_ifft = planner.plan_fft_inverse(slice_len);

    let mut data = vec![0.0; n_channels * n_samples];

    // stationary band-limited signal, full trial length
    for (c, &(row, col)) in positions.iter().enumerate() {
        let mask = spec.mask_value(row, col);
        let mut freq = vec![Complex::new(0.0, 0.0); n_samples];
        for (b, band) in FEATURE_BANDS.iter().enumerate() {
            let variance = spec.channel_variance(b, mask, label);
            fill_band(
                &mut freq,
                n_samples,
                spec.sample_rate_hz,
                band.low_hz + spec.band_margin_hz,
                band.high_hz - spec.band_margin_hz,
                variance,
                rng,
            )?;
        }
        let mut buf = freq;
        trial_ifft.process(&mut buf);
        let channel = &mut data[c * n_samples..(c + 1) * n_samples];
        for (x, v) in channel.iter_mut().zip(&buf) {
            *x = v.re;
        }
    }

    // shared per-trial offset, one second long, tiled over every slice
    if spec.sigma_trial > 0.0 {
        for c in 0..n_channels {
            let mut freq = vec![Complex::new(0.0, 0.0); slice_len];
            for (b, band) in FEATURE_BANDS.iter().enumerate() {
                let variance = spec.sigma_trial.powi(2) * spec.band_sigma_sq[b];
                fill_band(
                    &mut freq,
                    slice_len,
                    spec.sample_rate_hz,
                    band.low_hz + spec.band_margin_hz,
                    band.high_hz - spec.band_margin_hz,
                    variance,
                    rng,
                )?;
            }
            let mut buf = freq;
            offset_ifft.process(&mut buf);
            let channel = &mut data[c * n_samples..(c + 1) * n_samples];
            for (i, x) in channel.iter_mut().enumerate() {
                *x += buf[i % slice_len].re;
            }
        }
    }
    Ok(data)
}

/// Fills DFT bins inside `[low_hz, high_hz)` with complex Gaussian
/// coefficients such that the real time-domain signal from these bins has
/// the requested variance. The conjugate bins keep the signal real under an
/// unnormalized inverse DFT.
fn fill_band(
    freq: &mut [Complex<f64>],
    n: usize,
    sample_rate_hz: f64,
    low_hz: f64,
    high_hz: f64,
    variance: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if variance == 0.0 {
        return Ok(());
    }
    let df = sample_rate_hz / n as f64;
    let k_lo = (low_hz / df).ceil() as usize;
    let k_hi = ((high_hz / df).ceil() as usize).min(n / 2);
    if k_lo >= k_hi {
        return Err(Error::invalid(format!(
            "no synthesis bins in [{low_hz}, {high_hz}) Hz at resolution {df} Hz"
        )));
    }
    let n_bins = k_hi - k_lo;
    let sigma_z = (variance / (4.0 * n_bins as f64)).sqrt();
    use rand_distr::{Distribution, StandardNormal};
    for k in k_lo..k_hi {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let z = Complex::new(a * sigma_z, b * sigma_z);
        freq[k] += z;
        freq[n - k] += z.conj();
    }
    let _ = rng; // rng advanced deterministically per band
    Ok(())
}
