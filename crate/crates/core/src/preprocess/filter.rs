//! IIR filter design and application.
//!
//! Filters are cascades of biquad sections. The bandpass is built as a
//! Butterworth highpass at the low edge cascaded with a Butterworth lowpass
//! at the high edge (half the requested order each); the notch is a single
//! biquad. Zero-phase application runs the cascade forward and backward,
//! which squares the magnitude response and cancels group delay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Filter kind plus its frequency parameters in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterKind {
    Bandpass { low_hz: f64, high_hz: f64 },
    Notch { center_hz: f64, q_factor: f64 },
}

/// A filter request: kind, total pole count, and phase mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub zero_phase: bool,
}

impl FilterSpec {
    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Bandpass { low_hz, high_hz },
            order: 4,
            zero_phase: true,
        }
    }

    pub fn notch(center_hz: f64, q_factor: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Notch {
                center_hz,
                q_factor,
            },
            order: 2,
            zero_phase: true,
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if self.order < 2 || self.order % 2 != 0 {
            return Err(Error::invalid(format!(
                "filter order {} must be even and >= 2",
                self.order
            )));
        }
        match self.kind {
            FilterKind::Bandpass { low_hz, high_hz } => {
                if !(0.0 < low_hz && low_hz < high_hz && high_hz < nyquist) {
                    return Err(Error::invalid(format!(
                        "bandpass {low_hz}..{high_hz} Hz invalid for sample rate {sample_rate_hz}"
                    )));
                }
            }
            FilterKind::Notch {
                center_hz,
                q_factor,
            } => {
                if !(0.0 < center_hz && center_hz < nyquist) {
                    return Err(Error::invalid(format!(
                        "notch center {center_hz} Hz outside (0, {nyquist})"
                    )));
                }
                if q_factor <= 0.0 {
                    return Err(Error::invalid("notch q_factor must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// One second-order (or first-order, when `b2 == a2 == 0`) section with
/// normalized `a0 == 1`.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Largest pole magnitude of this section.
    pub fn max_pole_magnitude(&self) -> f64 {
        // roots of z^2 + a1 z + a2
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            let p1 = (-self.a1 + r) / 2.0;
            let p2 = (-self.a1 - r) / 2.0;
            p1.abs().max(p2.abs())
        } else {
            // complex pair: |p|^2 = a2
            self.a2.sqrt()
        }
    }

    /// In-place forward pass (direct form II transposed).
    pub fn apply(&self, x: &mut [f64]) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

/// A designed cascade ready to run at one sample rate.
#[derive(Debug, Clone)]
pub struct FilterCascade {
    pub sections: Vec<Biquad>,
    pub zero_phase: bool,
}

impl FilterCascade {
    /// Applies the cascade to one channel. Zero-phase mode runs
    /// forward-backward (squared magnitude, no group delay).
    pub fn filter_channel(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.apply(x);
        }
        if self.zero_phase {
            x.reverse();
            for s in &self.sections {
                s.apply(x);
            }
            x.reverse();
        }
    }
}

/// Designs the cascade for `spec` at the given sample rate, verifying
/// stability of every section.
pub fn design(spec: &FilterSpec, sample_rate_hz: f64) -> Result<FilterCascade> {
    spec.validate(sample_rate_hz)?;
    let sections = match spec.kind {
        FilterKind::Bandpass { low_hz, high_hz } => {
            let side_order = spec.order / 2;
            let mut s = butterworth(side_order, low_hz, sample_rate_hz, true);
            s.extend(butterworth(side_order, high_hz, sample_rate_hz, false));
            s
        }
        FilterKind::Notch {
            center_hz,
            q_factor,
        } => vec![notch_biquad(center_hz, q_factor, sample_rate_hz)],
    };
    for (i, s) in sections.iter().enumerate() {
        let mag = s.max_pole_magnitude();
        if mag >= 1.0 {
            return Err(Error::numerical(format!(
                "unstable filter design: section {i} pole magnitude {mag:.6} >= 1"
            )));
        }
    }
    Ok(FilterCascade {
        sections,
        zero_phase: spec.zero_phase,
    })
}

/// Butterworth high/low-pass of the given order as cascaded sections, all at
/// cutoff `fc`. Even orders use biquads with the standard Q ladder
/// `Q_k = 1 / (2 sin(pi (2k+1) / (2n)))`; odd orders add one first-order
/// section.
fn butterworth(order: usize, fc: f64, fs: f64, highpass: bool) -> Vec<Biquad> {
    let n = order;
    let mut sections = Vec::new();
    let pairs = n / 2;
    for k in 0..pairs {
        let q = 1.0 / (2.0 * (std::f64::consts::PI * (2 * k + 1) as f64 / (2.0 * n as f64)).sin());
        sections.push(if highpass {
            rbj_highpass(fc, q, fs)
        } else {
            rbj_lowpass(fc, q, fs)
        });
    }
    if n % 2 == 1 {
        sections.push(first_order(fc, fs, highpass));
    }
    sections
}

fn rbj_lowpass(fc: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * std::f64::consts::PI * fc / fs;
    let (sinw, cosw) = w0.sin_cos();
    let alpha = sinw / (2.0 * q);
    let a0 = 1.0 + alpha;
    Biquad {
        b0: (1.0 - cosw) / 2.0 / a0,
        b1: (1.0 - cosw) / a0,
        b2: (1.0 - cosw) / 2.0 / a0,
        a1: -2.0 * cosw / a0,
        a2: (1.0 - alpha) / a0,
    }
}

fn rbj_highpass(fc: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * std::f64::consts::PI * fc / fs;
    let (sinw, cosw) = w0.sin_cos();
    let alpha = sinw / (2.0 * q);
    let a0 = 1.0 + alpha;
    Biquad {
        b0: (1.0 + cosw) / 2.0 / a0,
        b1: -(1.0 + cosw) / a0,
        b2: (1.0 + cosw) / 2.0 / a0,
        a1: -2.0 * cosw / a0,
        a2: (1.0 - alpha) / a0,
    }
}

fn notch_biquad(fc: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * std::f64::consts::PI * fc / fs;
    let (sinw, cosw) = w0.sin_cos();
    let alpha = sinw / (2.0 * q);
    let a0 = 1.0 + alpha;
    Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * cosw / a0,
        b2: 1.0 / a0,
        a1: -2.0 * cosw / a0,
        a2: (1.0 - alpha) / a0,
    }
}

fn first_order(fc: f64, fs: f64, highpass: bool) -> Biquad {
    let k = (std::f64::consts::PI * fc / fs).tan();
    if highpass {
        Biquad {
            b0: 1.0 / (1.0 + k),
            b1: -1.0 / (1.0 + k),
            b2: 0.0,
            a1: (k - 1.0) / (k + 1.0),
            a2: 0.0,
        }
    } else {
        Biquad {
            b0: k / (1.0 + k),
            b1: k / (1.0 + k),
            b2: 0.0,
            a1: (k - 1.0) / (k + 1.0),
            a2: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn tone(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
        let n = (fs * seconds) as usize;
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    /// Interior samples after discarding 1 s at each end.
    fn interior(x: &[f64], fs: f64) -> &[f64] {
        let edge = fs as usize;
        &x[edge..x.len() - edge]
    }

    #[test]
    fn notch_kills_50hz() {
        let fs = 250.0;
        let spec = FilterSpec::notch(50.0, 30.0);
        let cascade = design(&spec, fs).unwrap();
        let mut x = tone(50.0, fs, 10.0);
        let input_rms = rms(interior(&x, fs));
        cascade.filter_channel(&mut x);
        assert!(rms(interior(&x, fs)) < 0.05 * input_rms);
    }

    #[test]
    fn bandpass_passes_10hz() {
        let fs = 250.0;
        let spec = FilterSpec::bandpass(0.5, 60.0);
        let cascade = design(&spec, fs).unwrap();
        let mut x = tone(10.0, fs, 10.0);
        let input_rms = rms(interior(&x, fs));
        cascade.filter_channel(&mut x);
        let out = rms(interior(&x, fs));
        assert!(
            (out - input_rms).abs() < 0.05 * input_rms,
            "passband rms {out} vs {input_rms}"
        );
    }

    #[test]
    fn bandpass_rejects_dc() {
        let fs = 250.0;
        let spec = FilterSpec::bandpass(0.5, 60.0);
        let cascade = design(&spec, fs).unwrap();
        let mut x = vec![1.0; 2500];
        cascade.filter_channel(&mut x);
        assert!(rms(interior(&x, fs)) < 0.05);
    }

    #[test]
    fn zero_phase_has_no_lag() {
        let fs = 250.0;
        let cascade = design(&FilterSpec::bandpass(0.5, 60.0), fs).unwrap();
        let x = tone(10.0, fs, 10.0);
        let mut y = x.clone();
        cascade.filter_channel(&mut y);
        // cross-correlation over interior, lags -5..5
        let edge = fs as usize;
        let mut best_lag = isize::MIN;
        let mut best = f64::MIN;
        for lag in -5isize..=5 {
            let mut acc = 0.0;
            for i in edge..(x.len() - edge) {
                let j = i as isize + lag;
                acc += x[i] * y[j as usize];
            }
            if acc > best {
                best = acc;
                best_lag = lag;
            }
        }
        assert_eq!(best_lag, 0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let fs = 250.0;
        assert!(design(&FilterSpec::bandpass(60.0, 0.5), fs).is_err());
        assert!(design(&FilterSpec::bandpass(0.5, 130.0), fs).is_err());
        let mut odd = FilterSpec::bandpass(0.5, 60.0);
        odd.order = 3;
        assert!(design(&odd, fs).is_err());
        assert!(design(&FilterSpec::notch(200.0, 30.0), fs).is_err());
    }

    #[test]
    fn unstable_section_detected() {
        let section = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: 0.0,
            a1: -2.1,
            a2: 1.1,
        };
        assert!(section.max_pole_magnitude() >= 1.0);
        // designed filters stay stable even near the Nyquist edge
        let c = design(&FilterSpec::bandpass(0.5, 124.0), 250.0).unwrap();
        for s in &c.sections {
            assert!(s.max_pole_magnitude() < 1.0);
        }
    }
}
