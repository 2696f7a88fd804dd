//! Synthetic heart-sound subjects for tests and demos.
//!
//! Each cycle of the PCG carries two Gaussian-enveloped tone bursts (S1 and
//! S2). Abnormal subjects add band-limited noise between them (a systolic
//! murmur). The companion ECG is a QRS spike with a small P and T wave,
//! locked to the same beat times.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::{bandpass, BandpassSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_vec, seeded, Rng};
use crate::signal_io::{write_wav, Label, ManifestEntry, Modality, MultiRecord, Recording};

/// Auscultation sites of the six-channel layout.
pub const VEST_SITES: [&str; 6] = ["aortic", "pulmonic", "erb", "tricuspid", "mitral", "apex"];

const MURMUR_BAND: BandpassSpec = BandpassSpec {
    low_hz: 100.0,
    high_hz: 300.0,
    order: 4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureMode {
    /// One PCG channel.
    SinglePcg,
    /// PCG plus ECG.
    Multimodal,
    /// Six PCG sites.
    Multichannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub mode: FixtureMode,
    pub fs: u32,
    pub duration_s: f64,
    pub heart_rate_bpm: (f64, f64),
    /// Murmur RMS relative to the S1 peak, drawn per subject.
    pub murmur_level: (f64, f64),
    pub noise_std: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            mode: FixtureMode::Multimodal,
            fs: 2000,
            duration_s: 10.0,
            heart_rate_bpm: (60.0, 90.0),
            murmur_level: (0.12, 0.25),
            noise_std: 0.02,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.heart_rate_bpm;
        if self.fs < 1000 || !(self.duration_s > 0.0) || !(lo > 0.0 && lo <= hi) || !(self.noise_std >= 0.0) {
            return Err(Error::Config(
                "fixtures need fs >= 1000, a positive duration and a valid heart-rate range".into(),
            ));
        }
        Ok(())
    }
}

/// Beat onset times plus the systolic interval length for each.
fn beat_times(cfg: &FixtureConfig, rng: &mut Rng) -> Vec<(f64, f64)> {
    let bpm = rng.gen_range(cfg.heart_rate_bpm.0..=cfg.heart_rate_bpm.1);
    let period = 60.0 / bpm;
    let mut t = rng.gen_range(0.0..period);
    let mut out = Vec::new();
    while t < cfg.duration_s + period {
        let p = period * rng.gen_range(0.97..1.03);
        out.push((t, 0.1 + 0.2 * p));
        t += p;
    }
    out
}

fn burst(t: f64, centre: f64, width: f64, freq: f64) -> f64 {
    let u = (t - centre) / width;
    if u.abs() > 5.0 {
        return 0.0;
    }
    (-u * u).exp() * (2.0 * std::f64::consts::PI * freq * (t - centre)).sin()
}

struct Heart {
    beats: Vec<(f64, f64)>,
    s1_hz: f64,
    s2_hz: f64,
    s2_gain: f64,
    murmur: Option<f64>,
}

fn pcg(h: &Heart, cfg: &FixtureConfig, gain: f64, delay_s: f64, murmur_gain: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let fs = cfg.fs as f64;
    let n = (cfg.duration_s * fs).round() as usize;
    let mut x = vec![0.0; n];
    for &(t0, sys) in &h.beats {
        let (c1, c2) = (t0 + 0.05 + delay_s, t0 + 0.05 + sys + delay_s);
        let lo = ((c1 - 0.1) * fs).max(0.0) as usize;
        let hi = (((c2 + 0.1) * fs) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / fs;
            *v += gain * (burst(t, c1, 0.018, h.s1_hz) + h.s2_gain * burst(t, c2, 0.014, h.s2_hz));
        }
    }
    if let Some(level) = h.murmur {
        let raw = Recording::new(normal_vec(rng, n), cfg.fs, Modality::Pcg);
        let noise = bandpass(&raw, &MURMUR_BAND)?.samples;
        let rms = (noise.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
        for &(t0, sys) in &h.beats {
            let (a, b) = (t0 + 0.09 + delay_s, t0 + 0.01 + sys + delay_s);
            let lo = ((a * fs).max(0.0) as usize).min(n);
            let hi = ((b * fs).max(0.0) as usize).min(n);
            for i in lo..hi {
                // diamond-shaped envelope peaking mid-systole
                let u = (i - lo) as f64 / (hi - lo).max(1) as f64;
                let env = 1.0 - (2.0 * u - 1.0).abs();
                x[i] += gain * murmur_gain * level * 2.0 * env * noise[i] / rms;
            }
        }
    }
    for v in x.iter_mut() {
        *v += cfg.noise_std * crate::rng::normal(rng);
    }
    Ok(x)
}

fn ecg(h: &Heart, cfg: &FixtureConfig, rng: &mut Rng) -> Vec<f64> {
    let fs = cfg.fs as f64;
    let n = (cfg.duration_s * fs).round() as usize;
    let g = |t: f64, c: f64, w: f64| (-((t - c) / w).powi(2)).exp();
    let mut x = vec![0.0; n];
    for &(t0, sys) in &h.beats {
        let lo = ((t0 - 0.25) * fs).max(0.0) as usize;
        let hi = (((t0 + sys + 0.3) * fs) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / fs;
            *v += 0.12 * g(t, t0 - 0.15, 0.025) + g(t, t0, 0.008) - 0.15 * g(t, t0 + 0.025, 0.008)
                + 0.25 * g(t, t0 + sys - 0.02, 0.04);
        }
    }
    for v in x.iter_mut() {
        *v += cfg.noise_std * crate::rng::normal(rng);
    }
    x
}

/// One subject; identical `(id, label, cfg, seed)` give identical samples.
pub fn fixture_subject(id: &str, label: Label, cfg: &FixtureConfig, seed: u64) -> Result<MultiRecord> {
    cfg.validate()?;
    let mut rng = seeded(derive_seed(seed, &["fixture", id]));
    let beats = beat_times(cfg, &mut rng);
    let heart = Heart {
        beats,
        s1_hz: rng.gen_range(40.0..60.0),
        s2_hz: rng.gen_range(55.0..80.0),
        s2_gain: rng.gen_range(0.5..0.8),
        murmur: (label == Label::Abnormal).then(|| rng.gen_range(cfg.murmur_level.0..=cfg.murmur_level.1)),
    };
    let channels = match cfg.mode {
        FixtureMode::SinglePcg => vec![Recording::new(pcg(&heart, cfg, 1.0, 0.0, 1.0, &mut rng)?, cfg.fs, Modality::Pcg)],
        FixtureMode::Multimodal => vec![
            Recording::new(pcg(&heart, cfg, 1.0, 0.0, 1.0, &mut rng)?, cfg.fs, Modality::Pcg),
            Recording::new(ecg(&heart, cfg, &mut rng), cfg.fs, Modality::Ecg),
        ],
        FixtureMode::Multichannel => {
            let mut ch = Vec::with_capacity(VEST_SITES.len());
            for (k, site) in VEST_SITES.iter().enumerate() {
                let gain = rng.gen_range(0.6..1.0);
                let delay = 0.002 * k as f64;
                // murmur loudest over the aortic and pulmonic sites
                let mg = 1.0 - 0.1 * k as f64;
                let x = pcg(&heart, cfg, gain, delay, mg, &mut rng)?;
                ch.push(Recording::new(x, cfg.fs, Modality::Pcg).with_site(*site));
            }
            ch
        }
    };
    Ok(MultiRecord::new(id, label, channels))
}

/// `n` subjects alternating normal and abnormal, ids `fx-000`, `fx-001`, ...
pub fn fixture_dataset(n: usize, cfg: &FixtureConfig, seed: u64) -> Result<Vec<MultiRecord>> {
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
            fixture_subject(&format!("fx-{i:03}"), label, cfg, seed)
        })
        .collect()
}

/// Write one 16-bit WAV per channel under `dir` and return manifest entries
/// with paths relative to `dir`.
pub fn write_records(dir: &Path, records: &[MultiRecord], dataset: &str) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut paths = Vec::with_capacity(r.channels.len());
        for (k, ch) in r.channels.iter().enumerate() {
            let tag = match (&ch.channel_site, ch.modality) {
                (Some(s), _) => s.clone(),
                (None, Modality::Pcg) => "pcg".into(),
                (None, Modality::Ecg) => "ecg".into(),
            };
            let name = format!("{}_{k}_{tag}.wav", r.subject_id);
            write_wav(ch, dir.join(&name))?;
            paths.push(name);
        }
        out.push(ManifestEntry {
            paths,
            subject_id: r.subject_id.clone(),
            label: r.label,
            dataset: dataset.to_string(),
            modalities: r.modalities(),
            sites: r.channels.iter().map(|c| c.channel_site.clone()).collect(),
            source: r.source.clone(),
            provenance: None,
        });
    }
    Ok(out)
}
