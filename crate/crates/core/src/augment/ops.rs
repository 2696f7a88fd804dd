//! Individual signal augmentations. Each is a pure function of its input and
//! explicit parameters; randomness lives in the pipeline that draws them.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::noise::{NoiseBank, NoiseKind};
use crate::dsp::{hann, resample, Biquad, StftPlan};
use crate::error::{Error, Flag, Flagged, Result};
use crate::signal_io::{Modality, Recording};

pub const HPSS_WINDOW: usize = 512;
pub const HPSS_HOP: usize = 128;
const HPSS_KERNEL: usize = 17;

pub const WSOLA_WINDOW: usize = 512;
pub const WSOLA_HOP: usize = 256;
pub const WSOLA_TOLERANCE: usize = 128;

pub(crate) fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
pub(crate) fn rms(x: &[f64]) -> f64 {
    power(x).sqrt()
}

fn median(buf: &mut [f64]) -> f64 {
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Harmonic component by median-filter HPSS with a soft (p = 2) mask.
/// Inputs shorter than the analysis window pass through flagged.
pub fn hpss(rec: &Recording) -> Result<Flagged<Recording>> {
    if rec.len() < HPSS_WINDOW {
        return Ok(Flagged::flagged(rec.clone(), Flag::TooShort));
    }
    let plan = StftPlan::new(HPSS_WINDOW, HPSS_HOP)?;
    let mut spec = plan.forward(&rec.samples)?;
    let (frames, bins) = (spec.frames, spec.bins);
    let mag = spec.magnitude();
    let half = HPSS_KERNEL / 2;
    let mut buf = Vec::with_capacity(HPSS_KERNEL);
    let mut harm = vec![0.0; mag.len()];
    let mut perc = vec![0.0; mag.len()];
    for f in 0..frames {
        for b in 0..bins {
            buf.clear();
            for g in f.saturating_sub(half)..(f + half + 1).min(frames) {
                buf.push(mag[g * bins + b]);
            }
            harm[f * bins + b] = median(&mut buf);
            buf.clear();
            buf.extend_from_slice(&mag[f * bins + b.saturating_sub(half)..f * bins + (b + half + 1).min(bins)]);
            perc[f * bins + b] = median(&mut buf);
        }
    }
    for (i, c) in spec.data.iter_mut().enumerate() {
        let (h2, p2) = (harm[i] * harm[i], perc[i] * perc[i]);
        let m = if h2 + p2 > 0.0 { h2 / (h2 + p2) } else { 0.0 };
        *c *= m;
    }
    Ok(Flagged::ok(rec.with_samples(plan.inverse(&spec, rec.len()))))
}

/// Scale `noise` so that signal power over noise power equals `snr_db`.
fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Vec<f64> {
    let ps = power(signal);
    let pn = power(noise);
    if pn == 0.0 {
        return signal.to_vec();
    }
    let g = (ps / 10f64.powf(snr_db / 10.0) / pn).sqrt();
    signal.iter().zip(noise).map(|(s, n)| s + g * n).collect()
}

/// Add a pre-drawn noise realization at an exact SNR. `+∞` is a no-op;
/// silent input passes through flagged.
pub fn add_white_noise(rec: &Recording, snr_db: f64, noise: &[f64]) -> Result<Flagged<Recording>> {
    if snr_db == f64::INFINITY {
        return Ok(Flagged::ok(rec.clone()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Argument(format!("snr_db must be finite, got {snr_db}")));
    }
    if power(&rec.samples) == 0.0 {
        return Ok(Flagged::flagged(rec.clone(), Flag::Silent));
    }
    if noise.len() < rec.len() {
        return Err(Error::Argument("noise realization shorter than signal".into()));
    }
    Ok(Flagged::ok(rec.with_samples(mix_at_snr(&rec.samples, &noise[..rec.len()], snr_db))))
}

/// Output length of a stretch by `rate`.
pub fn stretched_len(len: usize, rate: f64) -> usize {
    (len as f64 / rate).round() as usize
}

/// WSOLA time stretch; `rate > 1` shortens. Output length is exactly
/// `round(len / rate)`.
pub fn time_stretch(x: &[f64], rate: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Argument(format!("stretch rate must be positive, got {rate}")));
    }
    if rate == 1.0 || x.is_empty() {
        return Ok(x.to_vec());
    }
    let n = WSOLA_WINDOW;
    let hs = WSOLA_HOP;
    let tol = WSOLA_TOLERANCE;
    let out_len = stretched_len(x.len(), rate);
    let frames = out_len / hs + 2;
    // input is zero-padded so every candidate window is in range; frame k is
    // centred on output sample k·hs
    let lead = n / 2 + tol;
    let ha = hs as f64 * rate;
    let tail = ((frames as f64) * ha).ceil() as usize + n + 2 * tol + hs;
    let mut xp = vec![0.0; lead + x.len() + tail];
    xp[lead..lead + x.len()].copy_from_slice(x);
    let win = hann(n);
    let mut y = vec![0.0; frames * hs + n];
    let mut wsum = vec![0.0; frames * hs + n];
    let mut prev: Option<usize> = None;
    for k in 0..frames {
        let ideal = tol + (k as f64 * ha).round() as usize;
        let start = match prev {
            None => ideal,
            Some(p) => {
                let natural = &xp[p + hs..p + hs + n];
                let mut best = ideal;
                let mut best_score = f64::NEG_INFINITY;
                for cand in ideal - tol..=ideal + tol {
                    let score = crate::nn::dot(&xp[cand..cand + n], natural);
                    if score > best_score {
                        best_score = score;
                        best = cand;
                    }
                }
                best
            }
        };
        let o = k * hs;
        for i in 0..n {
            y[o + i] += xp[start + i] * win[i];
            wsum[o + i] += win[i];
        }
        prev = Some(start);
    }
    Ok((0..out_len)
        .map(|i| {
            let j = i + n / 2;
            if wsum[j] > 1e-8 {
                y[j] / wsum[j]
            } else {
                0.0
            }
        })
        .collect())
}

/// `x·(1 + depth·sin(2π·f·n/fs + phase))`.
pub fn amplitude_modulation(rec: &Recording, depth: f64, mod_hz: f64, phase: f64) -> Result<Recording> {
    if !(0.0..1.0).contains(&depth) {
        return Err(Error::Argument(format!("depth {depth} outside [0, 1)")));
    }
    if mod_hz >= rec.fs as f64 / 2.0 {
        return Err(Error::Argument(format!("modulation {mod_hz} Hz above Nyquist")));
    }
    if depth == 0.0 {
        return Ok(rec.clone());
    }
    let w = 2.0 * PI * mod_hz / rec.fs as f64;
    Ok(rec.with_samples(
        rec.samples
            .iter()
            .enumerate()
            .map(|(i, &v)| v * (1.0 + depth * (w * i as f64 + phase).sin()))
            .collect(),
    ))
}

/// Additive sinusoidal drift `amp·sin(2π·f·t + phase)`.
pub fn baseline_wander(rec: &Recording, amp: f64, wander_hz: f64, phase: f64) -> Result<Recording> {
    if !(0.0..=0.5).contains(&amp) || !(0.0..=1.0).contains(&wander_hz) {
        return Err(Error::Argument(format!(
            "wander amp {amp} / rate {wander_hz} Hz outside [0, 0.5] / [0, 1]"
        )));
    }
    if amp == 0.0 {
        return Ok(rec.clone());
    }
    let w = 2.0 * PI * wander_hz / rec.fs as f64;
    Ok(rec.with_samples(
        rec.samples
            .iter()
            .enumerate()
            .map(|(i, &v)| v + amp * (w * i as f64 + phase).sin())
            .collect(),
    ))
}

/// Additive drift taken from a bank clip starting at `offset`, scaled so its
/// peak magnitude equals `amp`.
pub fn baseline_wander_clip(rec: &Recording, clip: &[f64], offset: usize, amp: f64) -> Result<Recording> {
    let drift = tile_with_crossfade(clip, offset, rec.len(), rec.fs);
    let peak = drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > 0.0 { amp / peak } else { 0.0 };
    Ok(rec.with_samples(rec.samples.iter().zip(&drift).map(|(x, d)| x + g * d).collect()))
}

/// Single peaking biquad.
pub fn parametric_eq(rec: &Recording, center_hz: f64, gain_db: f64, q: f64) -> Result<Recording> {
    let fs = rec.fs as f64;
    if !(center_hz > 0.0 && center_hz < fs / 2.0) {
        return Err(Error::Argument(format!("EQ centre {center_hz} Hz outside (0, fs/2)")));
    }
    if gain_db.abs() > 12.0 || !(0.5..=5.0).contains(&q) {
        return Err(Error::Argument(format!("EQ gain {gain_db} dB / Q {q} out of range")));
    }
    let bq = Biquad::peaking(center_hz, gain_db, q, fs);
    Ok(rec.with_samples(bq.process(&rec.samples, [0.0; 2])))
}

/// `len` samples of `clip` read cyclically from `offset`, each wrap joined
/// by an equal-power crossfade of 50 ms.
pub fn tile_with_crossfade(clip: &[f64], offset: usize, len: usize, fs: u32) -> Vec<f64> {
    if clip.is_empty() {
        return vec![0.0; len];
    }
    let m = clip.len();
    let offset = offset % m;
    if offset + len <= m {
        return clip[offset..offset + len].to_vec();
    }
    let fade = ((0.05 * fs as f64).round() as usize).clamp(1, m / 2);
    // each tile contributes m - fade fresh samples; the tail of one tile
    // overlaps the head of the next
    let mut out = Vec::with_capacity(len + m);
    out.extend_from_slice(&clip[offset..]);
    while out.len() < len {
        // an offset near the clip end leaves a first piece shorter than the fade
        let f = fade.min(out.len());
        let start = out.len() - f;
        for i in 0..f {
            let t = (i as f64 + 0.5) / f as f64;
            let (a, b) = ((t * PI / 2.0).cos(), (t * PI / 2.0).sin());
            out[start + i] = a * out[start + i] + b * clip[i];
        }
        out.extend_from_slice(&clip[f..]);
    }
    out.truncate(len);
    out
}

/// Mix a bank clip of `kind` at `snr_db`. The clip is resampled to the
/// recording rate when needed.
pub fn add_clinical_noise(
    rec: &Recording,
    bank: &NoiseBank,
    kind: NoiseKind,
    clip_index: usize,
    offset: usize,
    snr_db: f64,
) -> Result<Flagged<Recording>> {
    let clips = bank.clips(kind);
    if clips.is_empty() {
        return Err(Error::Config(format!("noise bank has no {kind:?} clips")));
    }
    if power(&rec.samples) == 0.0 {
        return Ok(Flagged::flagged(rec.clone(), Flag::Silent));
    }
    let clip = &clips[clip_index % clips.len()];
    let resampled;
    let clip = if clip.fs == rec.fs {
        clip
    } else {
        resampled = resample(clip, rec.fs)?;
        &resampled
    };
    let noise = tile_with_crossfade(&clip.samples, offset, rec.len(), rec.fs);
    Ok(Flagged::ok(rec.with_samples(mix_at_snr(&rec.samples, &noise, snr_db))))
}

/// Noise kinds appropriate for clinical-noise mixing on `modality`.
pub fn clinical_kinds(modality: Modality) -> &'static [NoiseKind] {
    match modality {
        Modality::Pcg => &[NoiseKind::PcgClinical],
        Modality::Ecg => &[NoiseKind::EcgMuscle, NoiseKind::EcgElectrode],
    }
}

/// Zero the STFT frames in `frames` and the bins in `bins`, then invert.
pub fn spectro_mask(
    x: &[f64],
    window_len: usize,
    hop: usize,
    frames: std::ops::Range<usize>,
    bins: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    if x.len() < window_len {
        return Ok(x.to_vec());
    }
    let plan = StftPlan::new(window_len, hop)?;
    let mut s = plan.forward(x)?;
    let zero = Complex64::new(0.0, 0.0);
    for f in frames.start.min(s.frames)..frames.end.min(s.frames) {
        s.frame_mut(f).fill(zero);
    }
    for f in 0..s.frames {
        let fr = s.frame_mut(f);
        let n = fr.len();
        for c in &mut fr[bins.start.min(n)..bins.end.min(n)] {
            *c = zero;
        }
    }
    Ok(plan.inverse(&s, x.len()))
}

/// Stretch, then centre-crop or zero-pad back to the original length.
pub fn stretch_fixed_len(x: &[f64], rate: f64) -> Result<Vec<f64>> {
    let y = time_stretch(x, rate)?;
    let n = x.len();
    if y.len() >= n {
        let s = (y.len() - n) / 2;
        Ok(y[s..s + n].to_vec())
    } else {
        let mut out = vec![0.0; n];
        let s = (n - y.len()) / 2;
        out[s..s + y.len()].copy_from_slice(&y);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::tone_amplitude;
    use crate::rng::{normal_vec, seeded};
    use proptest::prelude::*;

    fn sine(f: f64, fs: u32, n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| a * (2.0 * PI * f * i as f64 / fs as f64).sin()).collect()
    }

    fn rec(x: Vec<f64>, fs: u32) -> Recording {
        Recording::new(x, fs, Modality::Pcg)
    }

    fn peak_bin(x: &[f64], n: usize) -> usize {
        let s = crate::dsp::stft(x, n, n).unwrap();
        let mut acc = vec![0.0; s.bins];
        for f in 0..s.frames {
            for (b, c) in s.frame(f).iter().enumerate() {
                acc[b] += c.norm();
            }
        }
        (0..s.bins).max_by(|&a, &b| acc[a].total_cmp(&acc[b])).unwrap()
    }

    #[test]
    fn hpss_keeps_tones_and_drops_clicks() {
        let x = sine(100.0, 4000, 16000, 0.8);
        let y = hpss(&rec(x.clone(), 4000)).unwrap().value;
        assert_eq!(y.len(), x.len());
        assert!(rms(&y.samples) >= 0.9 * rms(&x));

        let mut clicks = vec![0.0; 16000];
        for i in (500..16000).step_by(3000) {
            clicks[i] = 1.0;
        }
        let y = hpss(&rec(clicks.clone(), 4000)).unwrap().value;
        assert!(rms(&y.samples) <= 0.5 * rms(&clicks), "{}", rms(&y.samples) / rms(&clicks));

        let z = hpss(&rec(vec![0.0; 4000], 4000)).unwrap().value;
        assert!(z.samples.iter().all(|&v| v == 0.0));
        assert_eq!(hpss(&rec(vec![0.1; 100], 4000)).unwrap().flag, Some(Flag::TooShort));
    }

    #[test]
    fn white_noise_hits_requested_snr() {
        let x: Vec<f64> = sine(50.0, 1000, 10000, 2f64.sqrt());
        let mut rng = seeded(4);
        let noise = normal_vec(&mut rng, x.len());
        let y = add_white_noise(&rec(x.clone(), 1000), 20.0, &noise).unwrap().value;
        let added: Vec<f64> = y.samples.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert!((rms(&added) - 0.1).abs() < 0.006, "{}", rms(&added));
        let z = add_white_noise(&rec(x.clone(), 1000), f64::INFINITY, &noise).unwrap();
        assert_eq!(z.value.samples, x);
        let s = add_white_noise(&rec(vec![0.0; 10], 1000), 10.0, &noise).unwrap();
        assert_eq!(s.flag, Some(Flag::Silent));
    }

    #[test]
    fn stretch_lengths_and_pitch() {
        let x = sine(60.0, 1000, 8000, 0.7);
        assert_eq!(time_stretch(&x, 1.0).unwrap(), x);
        let y = time_stretch(&x, 0.5).unwrap();
        assert!((y.len() as i64 - 16000).abs() <= 256);
        let y = time_stretch(&x, 1.1).unwrap();
        assert_eq!(y.len(), 7273);
        let (b0, b1) = (peak_bin(&x, 1000), peak_bin(&y[500..6500], 1000));
        assert!((b0 as i64 - b1 as i64).abs() <= 1, "{b0} {b1}");
        assert!(matches!(time_stretch(&x, 0.0), Err(Error::Argument(_))));
        assert!(matches!(time_stretch(&x, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn stretch_keeps_amplitude_of_a_tone() {
        let x = sine(60.0, 1000, 8000, 0.7);
        for rate in [0.85, 0.9, 1.1, 1.15] {
            let y = time_stretch(&x, rate).unwrap();
            let m = y.len();
            let a = tone_amplitude(&y[m / 5..4 * m / 5], 60.0, 1000.0);
            assert!((a - 0.7).abs() < 0.07, "{rate}: {a}");
        }
    }

    #[test]
    fn amplitude_modulation_closed_forms() {
        let x = sine(40.0, 1000, 2000, 0.5);
        assert_eq!(amplitude_modulation(&rec(x.clone(), 1000), 0.0, 1.0, 0.3).unwrap().samples, x);
        let c = amplitude_modulation(&rec(vec![1.0; 4000], 1000), 0.5, 1.0, 0.0).unwrap();
        let lo = c.samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 0.5 - 1e-12 && hi <= 1.5 + 1e-12);
        assert!(lo < 0.5 + 1e-4 && hi > 1.5 - 1e-4);
    }

    #[test]
    fn amplitude_modulation_creates_sidebands() {
        let fs = 1000;
        let x = sine(50.0, fs, 40000, 1.0);
        let y = amplitude_modulation(&rec(x, fs), 0.3, 0.5, 0.0).unwrap();
        // sin·sin produces cosines at f±0.5 with amplitude depth/2
        let upper = tone_amplitude(&y.samples, 50.5, fs as f64);
        let lower = tone_amplitude(&y.samples, 49.5, fs as f64);
        assert!((upper - 0.15).abs() < 0.01 && (lower - 0.15).abs() < 0.01, "{upper} {lower}");
    }

    #[test]
    fn wander_closed_form_and_bank_clip() {
        let y = baseline_wander(&rec(vec![0.0; 5000], 1000), 0.2, 0.3, 0.0).unwrap();
        for (i, v) in y.samples.iter().enumerate() {
            assert!((v - 0.2 * (2.0 * PI * 0.3 * i as f64 / 1000.0).sin()).abs() < 1e-12);
        }
        assert_eq!(baseline_wander(&rec(vec![0.3; 10], 1000), 0.0, 0.3, 1.0).unwrap().samples, vec![0.3; 10]);

        let clip: Vec<f64> = (0..3000).map(|i| (i as f64 * 0.002).sin() * 2.0).collect();
        let x = sine(20.0, 1000, 1000, 0.3);
        let y = baseline_wander_clip(&rec(x.clone(), 1000), &clip, 100, 0.25).unwrap();
        let peak = clip[100..1100].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..1000 {
            assert!((y.samples[i] - x[i] - clip[100 + i] * 0.25 / peak).abs() < 1e-12);
        }
    }

    #[test]
    fn eq_gain_at_centre_and_far_band() {
        let fs = 4000;
        let x = sine(100.0, fs, 8000, 0.3);
        let y = parametric_eq(&rec(x.clone(), fs), 100.0, 0.0, 1.0).unwrap();
        assert!(y.samples.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
        let y = parametric_eq(&rec(x, fs), 100.0, 6.0, 1.0).unwrap();
        let g = tone_amplitude(&y.samples[2000..], 100.0, fs as f64) / 0.3;
        assert!((g / 1.995 - 1.0).abs() < 0.06, "{g}");
        let x = sine(1000.0, fs, 8000, 0.3);
        let y = parametric_eq(&rec(x, fs), 100.0, 6.0, 1.0).unwrap();
        let g = tone_amplitude(&y.samples[2000..], 1000.0, fs as f64) / 0.3;
        assert!((g - 1.0).abs() < 0.06, "{g}");
    }

    #[test]
    fn clinical_noise_errors_snr_and_tiling() {
        let x = rec(sine(30.0, 1000, 5000, 0.5), 1000);
        let empty = NoiseBank::default();
        assert!(matches!(
            add_clinical_noise(&x, &empty, NoiseKind::PcgClinical, 0, 0, 10.0),
            Err(Error::Config(_))
        ));
        let bank = NoiseBank::synthetic(1000, 8.0, 3);
        let y = add_clinical_noise(&x, &bank, NoiseKind::PcgClinical, 0, 777, 10.0).unwrap().value;
        let added: Vec<f64> = y.samples.iter().zip(&x.samples).map(|(a, b)| a - b).collect();
        let snr = 10.0 * (power(&x.samples) / power(&added)).log10();
        assert!((snr - 10.0).abs() < 0.5, "{snr}");

        // a slow tone cut mid-cycle jumps at the wrap; the crossfade hides it
        let clip = sine(3.0, 1000, 1100, 0.8);
        let t = tile_with_crossfade(&clip, 0, 5000, 1000);
        assert_eq!(t.len(), 5000);
        let max_step = t.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_step < 0.1, "{max_step}");
        assert!((clip[1099] - clip[0]).abs() > 0.1);
    }

    #[test]
    fn mask_zeroes_span_and_keeps_rest() {
        let x: Vec<f64> = normal_vec(&mut seeded(1), 16500).iter().map(|v| v * 0.3).collect();
        let y = spectro_mask(&x, 1024, 256, 20..27, 0..0).unwrap();
        assert_eq!(y.len(), x.len());
        // samples touched only by frames 20..=26
        assert!(rms(&y[5376..6400]) < 1e-6);
        let keep = 0..4096;
        let err: Vec<f64> = keep.clone().map(|i| y[i] - x[i]).collect();
        assert!(rms(&err) < 0.05 * rms(&x[keep]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn stretch_length_is_exact(len in 1usize..6000, rate in 0.5f64..2.0) {
            let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.05).sin()).collect();
            let y = time_stretch(&x, rate).unwrap();
            prop_assert_eq!(y.len(), stretched_len(len, rate));
            prop_assert!(y.iter().all(|v| v.abs() <= 1.0 + 1e-9));
            prop_assert_eq!(stretch_fixed_len(&x, rate).unwrap().len(), len);
        }

        #[test]
        fn tiling_any_offset_fills_the_length(m in 2usize..400, offset in 0usize..1000, len in 1usize..3000) {
            let clip: Vec<f64> = (0..m).map(|i| (i as f64 * 0.3).sin()).collect();
            let y = tile_with_crossfade(&clip, offset, len, 1000);
            prop_assert_eq!(y.len(), len);
            prop_assert!(y.iter().all(|v| v.abs() <= 1.5));
        }
    }
}
