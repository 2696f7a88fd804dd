use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::denoiser::{CondLabel, Conditioning, ConvDenoiser, Denoiser, DenoiserConfig};
use super::loss::diffusion_loss_batch;
use super::rearrange::{apply_rearrangement, detect_cycle_marks, draw_rearrangement, RearrangeMode, CROSSFADE_S};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use crate::dsp::{bandpass, mel_spectrogram, minmax_normalize, resample, BandpassSpec, MelSpec};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::{seeded, Rng};
use crate::signal_io::{Modality, MultiRecord, Recording};
use crate::train::{rmsprop_step, OptimizerConfig, OptimizerKind, OptimizerState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    /// Generator sample rate.
    pub fs: u32,
    pub steps: usize,
    pub batch_size: usize,
    /// Random crop length in samples.
    pub crop_len: usize,
    pub learning_rate: f64,
    pub rearrange_prob: f64,
    pub mel_window: usize,
    pub mel_hop: usize,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            fs: 1000,
            steps: 300,
            batch_size: 4,
            crop_len: 1024,
            learning_rate: 2e-3,
            rearrange_prob: 0.25,
            mel_window: 1024,
            mel_hop: 256,
            seed: 0,
        }
    }
}

impl DenoiserTrainConfig {
    pub fn mel_spec(&self) -> MelSpec {
        MelSpec {
            window_len: self.mel_window,
            hop: self.mel_hop,
            n_mels: self.denoiser.n_mels.max(1),
            fs: self.fs,
            fmin: 0.0,
            fmax: self.fs as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.crop_len == 0 || self.fs == 0 {
            return Err(Error::Config("steps, batch_size, crop_len and fs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rearrange_prob) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("rearrange_prob in [0,1] and learning_rate > 0 required".into()));
        }
        if self.denoiser.n_mels > 0 {
            self.mel_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// One aligned training pair at the generator rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserExample {
    pub target: Vec<f64>,
    /// Conditioning waveform, same length as `target`.
    pub cond: Option<Vec<f64>>,
    pub label: CondLabel,
}

/// Generation-side preparation: band-pass at the native rate with the
/// generation band, min-max normalize, resample to `fs`.
pub fn generator_input(rec: &Recording, fs: u32) -> Result<Vec<f64>> {
    let mut band = match rec.modality {
        Modality::Pcg => BandpassSpec::PCG_SYNTH,
        Modality::Ecg => BandpassSpec::ECG_SYNTH,
    };
    let nyq = rec.fs as f64 / 2.0;
    if band.high_hz >= nyq {
        band.high_hz = 0.9 * nyq;
    }
    let filtered = bandpass(rec, &band)?;
    let norm = minmax_normalize(&filtered)?.into_value();
    Ok(resample(&norm, fs)?.samples)
}

/// Single-channel mode: PCG target conditioned on the subject's ECG.
/// Multichannel mode (non-empty `sites`): every ordered pair of distinct
/// known sites.
pub fn examples_from_records(records: &[MultiRecord], sites: &[String], fs: u32) -> Result<Vec<DenoiserExample>> {
    let mut out = Vec::new();
    for r in records {
        if sites.is_empty() {
            let pcg = r.channels.iter().find(|c| c.modality == Modality::Pcg);
            let ecg = r.channels.iter().find(|c| c.modality == Modality::Ecg);
            let Some(pcg) = pcg else { continue };
            let target = generator_input(pcg, fs)?;
            let cond = ecg.map(|e| generator_input(e, fs)).transpose()?.map(|mut c| {
                c.resize(target.len(), 0.0);
                c
            });
            out.push(DenoiserExample {
                target,
                cond,
                label: CondLabel::disease(r.label),
            });
        } else {
            let prepared: Vec<(String, Vec<f64>)> = r
                .channels
                .iter()
                .filter_map(|c| c.channel_site.clone().filter(|s| sites.contains(s)).map(|s| (s, c)))
                .map(|(s, c)| Ok((s, generator_input(c, fs)?)))
                .collect::<Result<_>>()?;
            for (a, ca) in &prepared {
                for (b, cb) in &prepared {
                    if a == b {
                        continue;
                    }
                    let n = ca.len().min(cb.len());
                    out.push(DenoiserExample {
                        target: cb[..n].to_vec(),
                        cond: Some(ca[..n].to_vec()),
                        label: CondLabel::pair(r.label, a.clone(), b.clone()),
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no usable denoiser training examples".into()));
    }
    Ok(out)
}

/// `frames × n_mels` conditioning matrix.
/// Signals shorter than one window are zero-padded to a full window.
pub fn mel_conditioning(x: &[f64], spec: &MelSpec) -> Result<Mat> {
    let m = if x.len() < spec.window_len {
        let mut padded = x.to_vec();
        padded.resize(spec.window_len, 0.0);
        mel_spectrogram(&padded, spec)?
    } else {
        mel_spectrogram(x, spec)?
    };
    let mut out = Mat::zeros(m.frames, m.n_mels);
    for f in 0..m.frames {
        for b in 0..m.n_mels {
            out.set(f, b, m.get(b, f));
        }
    }
    Ok(out)
}

fn build_conditioning(cond: Option<&[f64]>, label: CondLabel, n_mels: usize, mel: &MelSpec) -> Result<Conditioning> {
    Ok(match (cond, n_mels) {
        (_, 0) => Conditioning::label_only(label),
        (Some(c), _) => Conditioning {
            mel: Some(mel_conditioning(c, mel)?),
            hop: mel.hop,
            label,
        },
        (None, _) => return Err(Error::Config("denoiser needs a conditioning signal".into())),
    })
}

/// A trained denoiser with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub version: u32,
    pub tag: String,
    pub fs: u32,
    pub mel: MelSpec,
    pub schedule: NoiseSchedule,
    pub denoiser: ConvDenoiser,
    pub losses: Vec<f64>,
}

impl Generator {
    pub fn conditioning(&self, cond: Option<&[f64]>, label: CondLabel) -> Result<Conditioning> {
        build_conditioning(cond, label, self.denoiser.config.n_mels, &self.mel)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: Generator = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if g.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {} unsupported", g.version)));
        }
        Ok(g)
    }
}

struct Prepared {
    ex: DenoiserExample,
    marks: Vec<usize>,
}

fn draw_crop(p: &Prepared, cfg: &DenoiserTrainConfig, rng: &mut Rng) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let len = p.ex.target.len();
    let (mut target, mut cond) = (p.ex.target.clone(), p.ex.cond.clone());
    if rng.gen::<f64>() < cfg.rearrange_prob {
        let mode = RearrangeMode::ALL[rng.gen_range(0..3)];
        if let Some(plan) = draw_rearrangement(len, &p.marks, mode, rng)? {
            let fade = ((CROSSFADE_S * cfg.fs as f64).round() as usize).max(1);
            target = apply_rearrangement(&target, &plan, fade);
            cond = cond.map(|c| apply_rearrangement(&c, &plan, fade));
        }
    }
    let n = cfg.crop_len.min(len);
    let off = rng.gen_range(0..=len - n);
    Ok((target[off..off + n].to_vec(), cond.map(|c| c[off..off + n].to_vec())))
}

/// RMSProp on the noise-prediction loss over random crops; each example is
/// cycle-rearranged with probability `rearrange_prob` before cropping.
pub fn train_denoiser(examples: &[DenoiserExample], cfg: &DenoiserTrainConfig) -> Result<Generator> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no denoiser training examples".into()));
    }
    let schedule = cfg.schedule.build()?;
    let mel = cfg.mel_spec();
    let mut den = ConvDenoiser::new(cfg.denoiser.clone(), cfg.seed)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let prepared: Vec<Prepared> = examples
        .iter()
        .map(|ex| {
            if ex.target.is_empty() || ex.cond.as_ref().is_some_and(|c| c.len() != ex.target.len()) {
                return Err(Error::Shape("example target and conditioning must be non-empty and aligned".into()));
            }
            Ok(Prepared {
                marks: detect_cycle_marks(&ex.target, cfg.fs),
                ex: ex.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let opt = OptimizerConfig {
        kind: OptimizerKind::Rmsprop,
        learning_rate: cfg.learning_rate,
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    let mut state = OptimizerState::default();
    let mut rng = seeded(cfg.seed);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let p = &prepared[rng.gen_range(0..prepared.len())];
            let (x0, c) = draw_crop(p, cfg, &mut rng)?;
            let cond = build_conditioning(c.as_deref(), p.ex.label.clone(), cfg.denoiser.n_mels, &mel)?;
            batch.push((x0, cond));
        }
        let out = diffusion_loss_batch(&den, &batch, &schedule, &mut rng)?;
        rmsprop_step(den.params_mut(), &out.grads, &mut state, &opt, cfg.learning_rate)?;
        losses.push(out.loss);
    }
    Ok(Generator {
        version: CHECKPOINT_VERSION,
        tag: cfg.denoiser.style.tag().to_string(),
        fs: cfg.fs,
        mel,
        schedule,
        denoiser: den,
        losses,
    })
}
