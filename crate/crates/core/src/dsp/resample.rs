//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal_io::Recording;

const KAISER_BETA: f64 = 8.6;
/// Taps per polyphase branch at the lower of the two rates.
const TAPS_PER_PHASE: usize = 64;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Precomputed filter bank for one `from → to` rate pair.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half: usize,
    /// `up` branches, each with `2·half` taps for offsets `-half+1 ..= half`.
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub fn new(from: u32, to: u32) -> Result<Self> {
        if from == 0 || to == 0 {
            return Err(Error::Argument("sample rates must be positive".into()));
        }
        let g = gcd(from as u64, to as u64);
        let up = (to as u64 / g) as usize;
        let down = (from as u64 / g) as usize;
        let ratio = up as f64 / down as f64;
        let scale = ratio.min(1.0);
        let cutoff = 0.5 * scale * ROLLOFF;
        let half = ((TAPS_PER_PHASE / 2) as f64 / scale).ceil() as usize;
        let mut phases = Vec::with_capacity(up);
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let mut taps: Vec<f64> = (0..2 * half)
                .map(|j| {
                    let offset = j as f64 - (half as f64 - 1.0) - frac;
                    let r = offset / half as f64;
                    let w = if r.abs() <= 1.0 {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
                    } else {
                        0.0
                    };
                    2.0 * cutoff * sinc(2.0 * cutoff * offset) * w
                })
                .collect();
            let s: f64 = taps.iter().sum();
            for t in &mut taps {
                *t /= s;
            }
            phases.push(taps);
        }
        Ok(Self {
            up,
            down,
            half,
            phases,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 * 2 + self.down as u128) / (2 * self.down as u128)) as usize
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let out_len = self.output_len(x.len());
        let n = x.len() as isize;
        (0..out_len)
            .map(|k| {
                let pos = k * self.down;
                let base = (pos / self.up) as isize;
                let taps = &self.phases[pos % self.up];
                let start = base - self.half as isize + 1;
                let mut acc = 0.0;
                for (j, &h) in taps.iter().enumerate() {
                    let i = start + j as isize;
                    if i >= 0 && i < n {
                        acc += h * x[i as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Resample to `target_fs`; output length is `round(len · target / fs)`.
pub fn resample(rec: &Recording, target_fs: u32) -> Result<Recording> {
    if target_fs == 0 {
        return Err(Error::Argument("target sample rate must be positive".into()));
    }
    if target_fs == rec.fs {
        return Ok(rec.clone());
    }
    let r = Resampler::new(rec.fs, target_fs)?;
    if r.output_len(rec.len()) == 0 {
        return Err(Error::Argument(format!(
            "resampling {} samples from {} Hz to {target_fs} Hz yields no output",
            rec.len(),
            rec.fs
        )));
    }
    let mut out = rec.with_samples(r.process(&rec.samples));
    out.fs = target_fs;
    Ok(out)
}
