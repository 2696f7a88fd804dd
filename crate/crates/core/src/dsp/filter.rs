//! Biquad sections, Butterworth band-pass design and zero-phase filtering.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{Modality, Recording};

/// Normalized biquad coefficients (`a0 = 1`), direct form II transposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    pub fn lowpass(fc: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw(
            (1.0 - c) / 2.0,
            1.0 - c,
            (1.0 - c) / 2.0,
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    pub fn highpass(fc: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw(
            (1.0 + c) / 2.0,
            -(1.0 + c),
            (1.0 + c) / 2.0,
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    /// Peaking equalizer (Audio EQ Cookbook form).
    pub fn peaking(fc: f64, gain_db: f64, q: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw(
            1.0 + alpha * a,
            -2.0 * c,
            1.0 - alpha * a,
            1.0 + alpha / a,
            -2.0 * c,
            1.0 - alpha / a,
        )
    }

    /// DC gain `sum(b) / sum(a)`.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Steady-state DF2T state for a constant input of 1.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    /// Magnitude response at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = self.b[1] * s1 + self.b[2] * s2;
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = self.a[0] * s1 + self.a[1] * s2;
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }

    pub fn process(&self, x: &[f64], state: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let [mut z1, mut z2] = state;
        x.iter()
            .map(|&v| {
                let y = b0 * v + z1;
                z1 = b1 * v - a1 * y + z2;
                z2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }
}

/// A cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub sections: Vec<Biquad>,
}

impl Cascade {
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(f, fs)).product()
    }

    /// Single forward pass starting from the steady state of `x[0]`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            let zi = s.steady_state();
            y = s.process(&y, [zi[0] * level, zi[1] * level]);
            level *= s.dc_gain();
        }
        y
    }

    /// Zero-phase forward-backward filtering with odd reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * 2 * self.sections.len()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.forward(&ext);
        y.reverse();
        let mut y = self.forward(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Band edges and per-direction order of a Butterworth band-pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl BandpassSpec {
    pub const PCG: BandpassSpec = BandpassSpec {
        low_hz: 25.0,
        high_hz: 400.0,
        order: 4,
    };
    pub const ECG: BandpassSpec = BandpassSpec {
        low_hz: 2.0,
        high_hz: 60.0,
        order: 4,
    };
    /// Generation-side bands.
    pub const PCG_SYNTH: BandpassSpec = BandpassSpec {
        low_hz: 2.0,
        high_hz: 500.0,
        order: 4,
    };
    pub const ECG_SYNTH: BandpassSpec = BandpassSpec {
        low_hz: 0.25,
        high_hz: 100.0,
        order: 4,
    };

    pub fn for_modality(m: Modality) -> Self {
        match m {
            Modality::Pcg => Self::PCG,
            Modality::Ecg => Self::ECG,
        }
    }

    pub fn validate(&self, fs: u32) -> Result<()> {
        let nyq = fs as f64 / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyq) {
            return Err(Error::Spec(format!(
                "band {}-{} Hz invalid for fs={fs} (need 0 < low < high < {nyq})",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 || self.order % 2 != 0 {
            return Err(Error::Spec(format!(
                "order {} must be even and positive",
                self.order
            )));
        }
        Ok(())
    }

    /// High-pass then low-pass Butterworth sections via the bilinear
    /// transform; each half has `order` poles.
    pub fn design(&self, fs: u32) -> Result<Cascade> {
        self.validate(fs)?;
        let fs = fs as f64;
        let mut sections = Vec::with_capacity(self.order);
        for k in 0..self.order / 2 {
            let q = butterworth_q(self.order, k);
            sections.push(Biquad::highpass(self.low_hz, q, fs));
        }
        for k in 0..self.order / 2 {
            let q = butterworth_q(self.order, k);
            sections.push(Biquad::lowpass(self.high_hz, q, fs));
        }
        Ok(Cascade { sections })
    }
}

/// Pole-pair quality factor of section `k` of an order-`n` Butterworth filter.
fn butterworth_q(n: usize, k: usize) -> f64 {
    let theta = PI * (2 * k + 1) as f64 / (2 * n) as f64;
    1.0 / (2.0 * theta.sin())
}

pub fn bandpass(rec: &Recording, spec: &BandpassSpec) -> Result<Recording> {
    let cascade = spec.design(rec.fs)?;
    Ok(rec.with_samples(cascade.filtfilt(&rec.samples)))
}
