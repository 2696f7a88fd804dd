//! Noise clips used for clinical-noise mixing and baseline drift.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::{resample, BandpassSpec};
use crate::error::Result;
use crate::rng::{derive_seed, normal_vec, seeded};
use crate::signal_io::{Modality, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    PcgClinical,
    EcgBaselineWander,
    EcgMuscle,
    EcgElectrode,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::PcgClinical,
        NoiseKind::EcgBaselineWander,
        NoiseKind::EcgMuscle,
        NoiseKind::EcgElectrode,
    ];
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseBank {
    clips: BTreeMap<NoiseKind, Vec<Recording>>,
}

impl NoiseBank {
    pub fn insert(&mut self, kind: NoiseKind, clip: Recording) {
        self.clips.entry(kind).or_default().push(clip);
    }

    pub fn clips(&self, kind: NoiseKind) -> &[Recording] {
        self.clips.get(&kind).map_or(&[], |v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.clips.values().all(|v| v.is_empty())
    }

    /// Every clip converted to `fs`, so mixing never resamples per call.
    pub fn resampled(&self, fs: u32) -> Result<Self> {
        let mut out = Self::default();
        for (k, v) in &self.clips {
            for c in v {
                out.insert(*k, resample(c, fs)?);
            }
        }
        Ok(out)
    }

    /// Stand-in clips generated from filtered noise and slow drift, two per
    /// kind, each `seconds` long.
    pub fn synthetic(fs: u32, seconds: f64, seed: u64) -> Self {
        let n = (seconds * fs as f64).round() as usize;
        let mut bank = Self::default();
        for kind in NoiseKind::ALL {
            for i in 0..2 {
                let mut rng = seeded(derive_seed(seed, &["noise", &format!("{kind:?}"), &i.to_string()]));
                let x = match kind {
                    NoiseKind::PcgClinical => {
                        // broadband hiss plus sporadic friction bursts
                        let mut x = band_noise(&mut rng, n, fs, 20.0, 0.45 * fs as f64);
                        let bursts = (seconds * 0.8).ceil() as usize;
                        for _ in 0..bursts {
                            let c = rng.gen_range(0..n);
                            let w = (0.08 * fs as f64) as isize;
                            for j in -w..=w {
                                let k = c as isize + j;
                                if k >= 0 && (k as usize) < n {
                                    let g = (-(j as f64 / (w as f64 / 2.5)).powi(2)).exp();
                                    x[k as usize] *= 1.0 + 3.0 * g;
                                }
                            }
                        }
                        x
                    }
                    NoiseKind::EcgBaselineWander => {
                        let parts: Vec<(f64, f64, f64)> = (0..3)
                            .map(|_| (rng.gen_range(0.05..0.6), rng.gen_range(0.3..1.0), rng.gen_range(0.0..6.28)))
                            .collect();
                        (0..n)
                            .map(|t| {
                                let t = t as f64 / fs as f64;
                                parts.iter().map(|(f, a, p)| a * (std::f64::consts::TAU * f * t + p).sin()).sum()
                            })
                            .collect()
                    }
                    NoiseKind::EcgMuscle => band_noise(&mut rng, n, fs, 20.0, (0.45 * fs as f64).min(150.0)),
                    NoiseKind::EcgElectrode => {
                        // step-like artefacts smoothed over ~50 ms, on top of low-band noise
                        let mut x = band_noise(&mut rng, n, fs, 0.5, (0.45 * fs as f64).min(40.0));
                        let mut level = 0.0;
                        let mut target = 0.0;
                        let alpha = 1.0 / (0.05 * fs as f64);
                        for v in x.iter_mut() {
                            if rng.gen_bool((0.5 / fs as f64).min(1.0)) {
                                target = rng.gen_range(-2.0..2.0);
                            }
                            level += alpha * (target - level);
                            *v += level;
                        }
                        x
                    }
                };
                let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
                let modality = if kind == NoiseKind::PcgClinical { Modality::Pcg } else { Modality::Ecg };
                let samples = x.iter().map(|v| v / peak).collect();
                bank.insert(kind, Recording::new(samples, fs, modality));
            }
        }
        bank
    }
}

fn band_noise(rng: &mut crate::rng::Rng, n: usize, fs: u32, lo: f64, hi: f64) -> Vec<f64> {
    let x = normal_vec(rng, n);
    let spec = BandpassSpec {
        low_hz: lo,
        high_hz: hi,
        order: 2,
    };
    match spec.design(fs) {
        Ok(c) => c.forward(&x),
        Err(_) => x,
    }
}
