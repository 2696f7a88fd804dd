//! Centered short-time Fourier transform and its overlap-add inverse.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex spectrogram stored frame-major: `data[frame * bins + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub window_len: usize,
    pub hop: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[Complex64] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [Complex64] {
        &mut self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Reflect `x` by `pad` samples at both ends (edge sample not repeated).
/// Falls back to repeated reflection for very short inputs.
pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let idx = |i: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let mut j = i.rem_euclid(period);
        if j >= n {
            j = period - j;
        }
        j as usize
    };
    (-(pad as isize)..n + pad as isize).map(|i| x[idx(i)]).collect()
}

pub struct StftPlan {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::Argument("hop must be positive".into()));
        }
        if window_len < 2 {
            return Err(Error::Argument("window must span at least 2 samples".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            window_len,
            hop,
            window: hann(window_len),
            fwd: planner.plan_fft_forward(window_len),
            inv: planner.plan_fft_inverse(window_len),
        })
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrogram> {
        if self.window_len > x.len() {
            return Err(Error::Argument(format!(
                "window {} longer than signal {}",
                self.window_len,
                x.len()
            )));
        }
        let pad = self.window_len / 2;
        let padded = reflect_pad(x, pad);
        let frames = self.frames_for(x.len());
        let bins = self.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.window_len];
        for f in 0..frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fwd.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram {
            frames,
            bins,
            window_len: self.window_len,
            hop: self.hop,
            data,
        })
    }

    /// Weighted overlap-add inverse; `len` is the original signal length.
    pub fn inverse(&self, spec: &Spectrogram, len: usize) -> Vec<f64> {
        let n = self.window_len;
        let pad = n / 2;
        let total = pad * 2 + len.max((spec.frames - 1) * self.hop + 1);
        let mut out = vec![0.0; total + n];
        let mut norm = vec![0.0; total + n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for f in 0..spec.frames {
            let fr = spec.frame(f);
            buf[..spec.bins].copy_from_slice(fr);
            for k in spec.bins..n {
                buf[k] = fr[n - k].conj();
            }
            self.inv.process(&mut buf);
            let start = f * self.hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += buf[i].re / n as f64 * w;
                norm[start + i] += w * w;
            }
        }
        (0..len)
            .map(|i| {
                let j = i + pad;
                if norm[j] > 1e-10 {
                    out[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn stft(x: &[f64], window_len: usize, hop: usize) -> Result<Spectrogram> {
    StftPlan::new(window_len, hop)?.forward(x)
}

pub fn istft(spec: &Spectrogram, len: usize) -> Result<Vec<f64>> {
    Ok(StftPlan::new(spec.window_len, spec.hop)?.inverse(spec, len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let s = stft(&vec![0.0; 16000], 1024, 256).unwrap();
        assert_eq!(s.frames, 63);
        assert_eq!(s.bins, 513);
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn hop_zero_is_an_argument_error() {
        assert!(matches!(stft(&[0.0; 64], 16, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn parseval_per_frame() {
        let x: Vec<f64> = (0..2048).map(|i| (i * 37 % 101) as f64 / 50.0 - 1.0).collect();
        let n = 256;
        let s = stft(&x, n, 64).unwrap();
        let padded = reflect_pad(&x, n / 2);
        let w = hann(n);
        for f in [0, 5, 17, s.frames - 1] {
            let energy: f64 = (0..n).map(|i| (padded[f * 64 + i] * w[i]).powi(2)).sum();
            let fr = s.frame(f);
            let mut spec_energy = fr[0].norm_sqr() + fr[n / 2].norm_sqr();
            for c in &fr[1..n / 2] {
                spec_energy += 2.0 * c.norm_sqr();
            }
            spec_energy /= n as f64;
            assert!((spec_energy - energy).abs() <= 1e-6 * energy);
        }
    }

    #[test]
    fn bin_centered_sine_has_one_dominant_bin() {
        let n = 512;
        let k = 20.0;
        let x: Vec<f64> = (0..8192)
            .map(|i| (2.0 * PI * k * i as f64 / n as f64).sin())
            .collect();
        let s = stft(&x, n, 128).unwrap();
        for f in 4..s.frames - 4 {
            let mags: Vec<f64> = s.frame(f).iter().map(|c| c.norm()).collect();
            let peak = mags[20];
            for (b, &m) in mags.iter().enumerate() {
                if (b as isize - 20).abs() > 1 {
                    assert!(20.0 * (peak / m.max(1e-300)).log10() >= 20.0);
                }
            }
        }
    }

    #[test]
    fn inverse_reconstructs_signal() {
        let x: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.013).sin() + 0.3 * (i as f64 * 0.4).cos()).collect();
        let s = stft(&x, 1024, 256).unwrap();
        let y = istft(&s, x.len()).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}
