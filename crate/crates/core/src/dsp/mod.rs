//! Preprocessing: filtering, resampling, normalization, spectral features
//! and segmentation.

mod filter;
mod mel;
mod resample;
mod segment;
mod stft;

pub use filter::{bandpass, Biquad, BandpassSpec, Cascade};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpec, MelSpectrogram};
pub use resample::{resample, Resampler};
pub use segment::{segment, SegmentSpec};
pub use stft::{hann, istft, stft, Spectrogram, StftPlan};

use crate::error::{Error, Flag, Flagged, Result};
use crate::signal_io::Recording;

/// Intermediate rate every recording passes through before band-limiting.
pub const BASE_FS: u32 = 1000;

/// Affine map of `[min, max]` onto `[-1, 1]`. A constant signal maps to zeros
/// and is flagged [`Flag::Degenerate`].
pub fn minmax_normalize(rec: &Recording) -> Result<Flagged<Recording>> {
    rec.validate()?;
    let (lo, hi) = rec
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo <= 0.0 {
        return Ok(Flagged::flagged(
            rec.with_samples(vec![0.0; rec.len()]),
            Flag::Degenerate,
        ));
    }
    let span = hi - lo;
    let out = rec
        .samples
        .iter()
        .map(|&v| if v == hi { 1.0 } else { 2.0 * (v - lo) / span - 1.0 })
        .collect();
    Ok(Flagged::ok(rec.with_samples(out)))
}

/// Resample to 1 kHz, band-pass for the modality, min-max normalize, then
/// resample to `target_fs`.
pub fn preprocess_chain(rec: &Recording, target_fs: u32) -> Result<Flagged<Recording>> {
    preprocess_with_band(rec, &BandpassSpec::for_modality(rec.modality), target_fs)
}

pub fn preprocess_with_band(
    rec: &Recording,
    band: &BandpassSpec,
    target_fs: u32,
) -> Result<Flagged<Recording>> {
    rec.validate()?;
    if (rec.fs as f64) < 2.0 * band.high_hz {
        return Err(Error::Spec(format!(
            "input rate {} Hz is below twice the {} Hz band edge",
            rec.fs, band.high_hz
        )));
    }
    let base = resample(rec, BASE_FS)?;
    let filtered = bandpass(&base, band)?;
    let norm = minmax_normalize(&filtered)?;
    let out = resample(&norm.value, target_fs)?;
    Ok(Flagged {
        value: out,
        flag: norm.flag,
    })
}

/// Amplitude of the `freq` sinusoid in `x`, by least-squares fit of
/// `a·sin + b·cos + c`.
pub fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / fs;
    let mut g = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (i, &v) in x.iter().enumerate() {
        let b = [(w * i as f64).sin(), (w * i as f64).cos(), 1.0];
        for p in 0..3 {
            r[p] += b[p] * v;
            for q in 0..3 {
                g[p][q] += b[p] * b[q];
            }
        }
    }
    let coef = solve3(g, r);
    coef[0].hypot(coef[1])
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for c in 0..3 {
        let p = (c..3)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for c in (0..3).rev() {
        let s: f64 = (c + 1..3).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    x
}
