//! HTK-scale triangular mel filterbank and log-mel spectrograms.

use serde::{Deserialize, Serialize};

use super::stft::StftPlan;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelSpec {
    pub window_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fs: u32,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelSpec {
    /// 1024/256/80 over the full band.
    pub fn standard(fs: u32) -> Self {
        Self {
            window_len: 1024,
            hop: 256,
            n_mels: 80,
            fs,
            fmin: 0.0,
            fmax: fs as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Spec(format!(
                "hop {} must be in 1..={}",
                self.hop, self.window_len
            )));
        }
        if self.n_mels == 0 || self.n_mels > self.window_len / 2 + 1 {
            return Err(Error::Spec(format!(
                "n_mels {} must be in 1..={}",
                self.n_mels,
                self.window_len / 2 + 1
            )));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.fs as f64 / 2.0 + 1e-9) {
            return Err(Error::Spec(format!(
                "mel range {}-{} Hz invalid for fs={}",
                self.fmin, self.fmax, self.fs
            )));
        }
        Ok(())
    }
}

/// `n_mels × bins` triangular weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(spec: &MelSpec) -> Result<Self> {
        spec.validate()?;
        let bins = spec.window_len / 2 + 1;
        let bin_hz = |k: usize| k as f64 * spec.fs as f64 / spec.window_len as f64;
        let (mlo, mhi) = (hz_to_mel(spec.fmin), hz_to_mel(spec.fmax));
        let edges: Vec<f64> = (0..spec.n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (spec.n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; spec.n_mels * bins];
        for m in 0..spec.n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * bins..(m + 1) * bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = bin_hz(k);
                let v = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                *w = v;
            }
            // triangles narrower than a bin fall back to the nearest bin
            if row.iter().all(|&w| w == 0.0) {
                let k = ((c * spec.window_len as f64 / spec.fs as f64).round() as usize).min(bins - 1);
                row[k] = 1.0;
            }
        }
        Ok(Self {
            n_mels: spec.n_mels,
            bins,
            weights,
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn apply(&self, power_frame: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| crate::nn::dot(self.row(m), power_frame))
            .collect()
    }
}

/// Log-compressed mel power spectrogram, stored `n_mels × frames` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub frames: usize,
    pub hop: usize,
    pub data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.data[mel * self.frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.get(m, frame)).collect()
    }

    /// Debug dump, one frame per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for f in 0..self.frames {
            let row: Vec<String> = self.column(f).iter().map(|v| format!("{v}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn mel_spectrogram(x: &[f64], spec: &MelSpec) -> Result<MelSpectrogram> {
    let bank = MelFilterbank::new(spec)?;
    let plan = StftPlan::new(spec.window_len, spec.hop)?;
    let s = plan.forward(x)?;
    let power = s.power();
    let mut data = vec![0.0; spec.n_mels * s.frames];
    for f in 0..s.frames {
        let frame = &power[f * s.bins..(f + 1) * s.bins];
        for (m, v) in bank.apply(frame).into_iter().enumerate() {
            data[m * s.frames + f] = v.ln_1p();
        }
    }
    Ok(MelSpectrogram {
        n_mels: spec.n_mels,
        frames: s.frames,
        hop: spec.hop,
        data,
    })
}
