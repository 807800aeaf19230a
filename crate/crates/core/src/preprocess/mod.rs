//! Preprocessing chain: common average reference, bandpass, notch, and
//! non-overlapping 1-second epoching.
//!
//! The pipeline order is CAR, then bandpass, then notch; filtering runs over
//! the full trial before epoching so interior slices see no edge effects.

pub mod filter;

pub use filter::{design, FilterCascade, FilterKind, FilterSpec};

use crate::dataset::{RawRecording, TrialMeta};
use crate::error::{Error, Result};

/// A trial cut into non-overlapping fixed-length slices. Each slice is
/// channel-major `[n_channels x samples_per_slice]`.
#[derive(Debug, Clone)]
pub struct EpochedTrial {
    pub meta: TrialMeta,
    pub n_channels: usize,
    pub samples_per_slice: usize,
    pub slices: Vec<Vec<f64>>,
}

impl EpochedTrial {
    pub fn slice_channel(&self, slice: usize, channel: usize) -> &[f64] {
        let sps = self.samples_per_slice;
        &self.slices[slice][channel * sps..(channel + 1) * sps]
    }
}

/// Subtracts the instantaneous cross-channel mean from every channel.
pub fn common_average_reference(rec: &RawRecording) -> Result<RawRecording> {
    if rec.n_channels < 2 {
        return Err(Error::invalid(
            "common average reference needs at least 2 channels",
        ));
    }
    let mut out = rec.clone();
    let n = rec.n_samples;
    for t in 0..n {
        let mut mean = 0.0;
        for c in 0..rec.n_channels {
            mean += rec.data[c * n + t];
        }
        mean /= rec.n_channels as f64;
        for c in 0..rec.n_channels {
            out.data[c * n + t] -= mean;
        }
    }
    Ok(out)
}

/// Applies a designed filter per channel.
pub fn apply_filter(rec: &RawRecording, spec: &FilterSpec) -> Result<RawRecording> {
    let cascade = design(spec, rec.meta.sample_rate_hz)?;
    let mut out = rec.clone();
    for c in 0..out.n_channels {
        cascade.filter_channel(out.channel_mut(c));
    }
    Ok(out)
}

/// Cuts a recording into non-overlapping slices of `slice_seconds`; a
/// trailing remainder shorter than one slice is dropped.
pub fn epoch_slices(rec: &RawRecording, slice_seconds: f64) -> Result<EpochedTrial> {
    let sps = (slice_seconds * rec.meta.sample_rate_hz).round() as usize;
    if sps == 0 || sps > rec.n_samples {
        return Err(Error::invalid(format!(
            "slice of {} samples does not fit a recording of {} samples",
            sps, rec.n_samples
        )));
    }
    let n_slices = rec.n_samples / sps;
    let mut slices = Vec::with_capacity(n_slices);
    for s in 0..n_slices {
        let mut slice = Vec::with_capacity(rec.n_channels * sps);
        for c in 0..rec.n_channels {
            let ch = rec.channel(c);
            slice.extend_from_slice(&ch[s * sps..(s + 1) * sps]);
        }
        slices.push(slice);
    }
    Ok(EpochedTrial {
        meta: rec.meta.clone(),
        n_channels: rec.n_channels,
        samples_per_slice: sps,
        slices,
    })
}

/// Pipeline options; `None` skips that stage.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub car: bool,
    pub bandpass: Option<FilterSpec>,
    pub notch: Option<FilterSpec>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            car: true,
            bandpass: Some(FilterSpec::bandpass(0.5, 60.0)),
            notch: Some(FilterSpec::notch(50.0, 30.0)),
        }
    }
}

impl PipelineOptions {
    /// No filtering at all, for data that was already filtered upstream.
    pub fn skip_filtering() -> Self {
        PipelineOptions {
            car: true,
            bandpass: None,
            notch: None,
        }
    }
}

/// CAR, bandpass, notch, in that order.
pub fn run_pipeline(rec: &RawRecording, opts: &PipelineOptions) -> Result<RawRecording> {
    let mut out = if opts.car {
        common_average_reference(rec)?
    } else {
        rec.clone()
    };
    if let Some(spec) = &opts.bandpass {
        out = apply_filter(&out, spec)?;
    }
    if let Some(spec) = &opts.notch {
        out = apply_filter(&out, spec)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RobotAbility;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec_from(data: Vec<f64>, n_channels: usize, sample_rate_hz: f64) -> RawRecording {
        let n_samples = data.len() / n_channels;
        RawRecording {
            meta: TrialMeta {
                subject_id: "s".into(),
                trial_index: 0,
                layout: 1,
                robot_ability: RobotAbility::HAR,
                scores: [3, 3, 3],
                sample_rate_hz,
            },
            n_channels,
            n_samples,
            data,
            channel_names: (0..n_channels).map(|i| format!("ch{i}")).collect(),
        }
    }

    #[test]
    fn car_zeroes_identical_channels() {
        let rec = rec_from(vec![5.0; 4 * 10], 4, 250.0);
        let out = common_average_reference(&rec).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn car_leaves_antisymmetric_pair() {
        let a: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let mut data = a.clone();
        data.extend(a.iter().map(|v| -v));
        let rec = rec_from(data.clone(), 2, 250.0);
        let out = common_average_reference(&rec).unwrap();
        for (x, y) in data.iter().zip(&out.data) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn car_column_means_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..4 * 10).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let rec = rec_from(data, 4, 250.0);
        let out = common_average_reference(&rec).unwrap();
        for t in 0..10 {
            let mean: f64 = (0..4).map(|c| out.data[c * 10 + t]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn car_idempotent_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..6 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..6 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rx = rec_from(x.clone(), 6, 250.0);
        let ry = rec_from(y.clone(), 6, 250.0);

        let once = common_average_reference(&rx).unwrap();
        let twice = common_average_reference(&once).unwrap();
        for (a, b) in once.data.iter().zip(&twice.data) {
            assert!((a - b).abs() < 1e-12);
        }

        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let car_combo = common_average_reference(&rec_from(combo, 6, 250.0)).unwrap();
        let cx = common_average_reference(&rx).unwrap();
        let cy = common_average_reference(&ry).unwrap();
        for i in 0..car_combo.data.len() {
            let lin = a * cx.data[i] + b * cy.data[i];
            assert!((car_combo.data[i] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn car_rejects_single_channel() {
        let rec = rec_from(vec![1.0; 10], 1, 250.0);
        assert!(common_average_reference(&rec).is_err());
    }

    #[test]
    fn epoch_60s_gives_60_slices() {
        let fs = 250.0;
        let rec = rec_from(vec![0.0; 64 * 15000], 64, fs);
        let ep = epoch_slices(&rec, 1.0).unwrap();
        assert_eq!(ep.slices.len(), 60);
        assert_eq!(ep.samples_per_slice, 250);
        assert_eq!(ep.slices[0].len(), 64 * 250);
    }

    #[test]
    fn epoch_drops_remainder() {
        let rec = rec_from(vec![0.0; 2 * 375], 2, 250.0);
        let ep = epoch_slices(&rec, 1.0).unwrap();
        assert_eq!(ep.slices.len(), 1);
    }

    #[test]
    fn epoch_reassembles_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..3 * 1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rec = rec_from(data.clone(), 3, 250.0);
        let ep = epoch_slices(&rec, 1.0).unwrap();
        // concatenation of slices per channel equals the input prefix
        for c in 0..3 {
            let mut rebuilt = Vec::new();
            for s in 0..ep.slices.len() {
                rebuilt.extend_from_slice(ep.slice_channel(s, c));
            }
            assert_eq!(rebuilt.as_slice(), &rec.channel(c)[..rebuilt.len()]);
        }
    }

    #[test]
    fn epoch_slice_longer_than_recording_errors() {
        let rec = rec_from(vec![0.0; 2 * 100], 2, 250.0);
        assert!(epoch_slices(&rec, 1.0).is_err());
    }
}
