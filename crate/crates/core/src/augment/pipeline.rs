//! Probabilistic offline pipelines and online training-time augmentation.
//!
//! Each pipeline first draws a plan (which ops fire and with what
//! parameters) and then applies it, so the random draws never depend on the
//! signal content.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::AugmentConfig;
use super::noise::{NoiseBank, NoiseKind};
use super::ops;
use crate::dsp::{hz_to_mel, mel_to_hz};
use crate::error::{Error, Flag, Result};
use crate::rng::{derive_seed, normal_vec, seeded, Rng};
use crate::signal_io::{Fragment, Label, Modality, MultiRecord, Provenance, Recording, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Hpss,
    WhiteNoise,
    TimeStretch,
    AmplitudeModulation,
    BaselineWander,
    ParametricEq,
    ClinicalNoise,
}

impl AugOp {
    /// Pipeline order.
    pub const ORDER: [AugOp; 7] = [
        AugOp::Hpss,
        AugOp::WhiteNoise,
        AugOp::TimeStretch,
        AugOp::AmplitudeModulation,
        AugOp::BaselineWander,
        AugOp::ParametricEq,
        AugOp::ClinicalNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::Hpss => "hpss",
            AugOp::WhiteNoise => "white_noise",
            AugOp::TimeStretch => "time_stretch",
            AugOp::AmplitudeModulation => "amplitude_modulation",
            AugOp::BaselineWander => "baseline_wander",
            AugOp::ParametricEq => "parametric_eq",
            AugOp::ClinicalNoise => "clinical_noise",
        }
    }
}

/// One fired augmentation with its drawn parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AugStep {
    Hpss,
    WhiteNoise { snr_db: f64, noise_seed: u64 },
    TimeStretch { rate: f64 },
    AmplitudeModulation { depth: f64, mod_hz: f64, phase: f64 },
    BaselineWander { amp: f64, wander_hz: f64, phase: f64, clip: Option<(u64, u64)> },
    ParametricEq { center_hz: f64, gain_db: f64, q: f64 },
    ClinicalNoise { kind_pick: u64, clip: u64, offset: u64, snr_db: f64 },
}

impl AugStep {
    pub fn op(&self) -> AugOp {
        match self {
            AugStep::Hpss => AugOp::Hpss,
            AugStep::WhiteNoise { .. } => AugOp::WhiteNoise,
            AugStep::TimeStretch { .. } => AugOp::TimeStretch,
            AugStep::AmplitudeModulation { .. } => AugOp::AmplitudeModulation,
            AugStep::BaselineWander { .. } => AugOp::BaselineWander,
            AugStep::ParametricEq { .. } => AugOp::ParametricEq,
            AugStep::ClinicalNoise { .. } => AugOp::ClinicalNoise,
        }
    }
}

/// How the stretch decision is made for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
enum StretchDraw {
    Own,
    Shared(Option<f64>),
}

fn fires(rng: &mut Rng, p: f64) -> bool {
    rng.gen::<f64>() < p
}

/// Draw which augmentations fire for one channel, and their parameters.
pub fn draw_plan(cfg: &AugmentConfig, modality: Modality, fs: u32, use_wander_bank: bool, rng: &mut Rng) -> Vec<AugStep> {
    draw_plan_inner(cfg, modality, fs, use_wander_bank, StretchDraw::Own, rng)
}

fn draw_plan_inner(
    cfg: &AugmentConfig,
    modality: Modality,
    fs: u32,
    use_wander_bank: bool,
    stretch: StretchDraw,
    rng: &mut Rng,
) -> Vec<AugStep> {
    let p = &cfg.probabilities;
    let nyq_guard = 0.45 * fs as f64;
    let mut plan = Vec::new();
    if fires(rng, p.hpss) {
        plan.push(AugStep::Hpss);
    }
    if fires(rng, p.white_noise) {
        plan.push(AugStep::WhiteNoise {
            snr_db: cfg.white_noise_snr_db.draw(rng),
            noise_seed: rng.gen(),
        });
    }
    match stretch {
        StretchDraw::Own => {
            if fires(rng, p.time_stretch) {
                plan.push(AugStep::TimeStretch {
                    rate: cfg.stretch_rate.draw(rng),
                });
            }
        }
        StretchDraw::Shared(Some(rate)) => plan.push(AugStep::TimeStretch { rate }),
        StretchDraw::Shared(None) => {}
    }
    if fires(rng, p.amplitude_modulation) {
        plan.push(AugStep::AmplitudeModulation {
            depth: cfg.am_depth.draw(rng),
            mod_hz: cfg.am_rate_hz.draw(rng).min(nyq_guard),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        });
    }
    if fires(rng, p.baseline_wander) {
        let amp = cfg.wander_amp.draw(rng);
        let wander_hz = cfg.wander_rate_hz.draw(rng);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let clip = if use_wander_bank && modality == Modality::Ecg {
            Some((rng.gen(), rng.gen()))
        } else {
            None
        };
        plan.push(AugStep::BaselineWander {
            amp,
            wander_hz,
            phase,
            clip,
        });
    }
    if fires(rng, p.parametric_eq) {
        let range = match modality {
            Modality::Pcg => cfg.eq_center_pcg_hz,
            Modality::Ecg => cfg.eq_center_ecg_hz,
        };
        plan.push(AugStep::ParametricEq {
            center_hz: range.draw_log(rng).min(nyq_guard),
            gain_db: cfg.eq_gain_db.draw(rng),
            q: cfg.eq_q.draw(rng),
        });
    }
    if fires(rng, p.clinical_noise) {
        plan.push(AugStep::ClinicalNoise {
            kind_pick: rng.gen(),
            clip: rng.gen(),
            offset: rng.gen(),
            snr_db: cfg.clinical_noise_snr_db.draw(rng),
        });
    }
    plan
}

/// Apply a drawn plan in order. Flags raised by pass-through cases are
/// collected rather than treated as errors.
pub fn apply_plan(rec: &Recording, plan: &[AugStep], bank: &NoiseBank) -> Result<(Recording, Vec<Flag>)> {
    let mut x = rec.clone();
    let mut flags = Vec::new();
    for step in plan {
        x = match *step {
            AugStep::Hpss => {
                let r = ops::hpss(&x)?;
                flags.extend(r.flag);
                r.value
            }
            AugStep::WhiteNoise { snr_db, noise_seed } => {
                let noise = normal_vec(&mut seeded(noise_seed), x.len());
                let r = ops::add_white_noise(&x, snr_db, &noise)?;
                flags.extend(r.flag);
                r.value
            }
            AugStep::TimeStretch { rate } => x.with_samples(ops::time_stretch(&x.samples, rate)?),
            AugStep::AmplitudeModulation { depth, mod_hz, phase } => ops::amplitude_modulation(&x, depth, mod_hz, phase)?,
            AugStep::BaselineWander {
                amp,
                wander_hz,
                phase,
                clip,
            } => match clip {
                Some((ci, off)) if !bank.clips(NoiseKind::EcgBaselineWander).is_empty() => {
                    let clips = bank.clips(NoiseKind::EcgBaselineWander);
                    let c = &clips[(ci % clips.len() as u64) as usize];
                    let c = if c.fs == x.fs { c.clone() } else { crate::dsp::resample(c, x.fs)? };
                    ops::baseline_wander_clip(&x, &c.samples, (off % c.len() as u64) as usize, amp)?
                }
                _ => ops::baseline_wander(&x, amp, wander_hz, phase)?,
            },
            AugStep::ParametricEq { center_hz, gain_db, q } => ops::parametric_eq(&x, center_hz, gain_db, q)?,
            AugStep::ClinicalNoise {
                kind_pick,
                clip,
                offset,
                snr_db,
            } => {
                let kinds = ops::clinical_kinds(x.modality);
                let kind = kinds[(kind_pick % kinds.len() as u64) as usize];
                let n = bank.clips(kind).len().max(1) as u64;
                let ci = (clip % n) as usize;
                let len = bank.clips(kind).get(ci).map_or(1, |c| c.len().max(1)) as u64;
                let r = ops::add_clinical_noise(&x, bank, kind, ci, (offset % len) as usize, snr_db)?;
                flags.extend(r.flag);
                r.value
            }
        };
    }
    Ok((x, flags))
}

/// Result of one offline augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented<T> {
    pub value: T,
    pub applied: Vec<AugOp>,
    pub flags: Vec<Flag>,
}

pub fn augment_single(rec: &Recording, cfg: &AugmentConfig, bank: &NoiseBank, rng: &mut Rng) -> Result<Augmented<Recording>> {
    let plan = draw_plan(cfg, rec.modality, rec.fs, !bank.clips(NoiseKind::EcgBaselineWander).is_empty(), rng);
    let (value, flags) = apply_plan(rec, &plan, bank)?;
    Ok(Augmented {
        value,
        applied: plan.iter().map(AugStep::op).collect(),
        flags,
    })
}

/// Multichannel and multimodal augmentation: one stretch decision shared by
/// every channel, all other ops drawn per channel.
pub fn augment_multi(mrec: &MultiRecord, cfg: &AugmentConfig, bank: &NoiseBank, rng: &mut Rng) -> Result<Augmented<MultiRecord>> {
    mrec.validate()?;
    if !mrec.is_aligned() {
        return Err(Error::Validation(format!("subject {}: channels are not duration-aligned", mrec.subject_id)));
    }
    let shared = if fires(rng, cfg.probabilities.time_stretch) {
        Some(cfg.stretch_rate.draw(rng))
    } else {
        None
    };
    let use_bank = !bank.clips(NoiseKind::EcgBaselineWander).is_empty();
    let mut channels = Vec::with_capacity(mrec.channels.len());
    let mut applied = Vec::new();
    let mut flags = Vec::new();
    for c in &mrec.channels {
        let plan = draw_plan_inner(cfg, c.modality, c.fs, use_bank, StretchDraw::Shared(shared), rng);
        let (v, f) = apply_plan(c, &plan, bank)?;
        applied.extend(plan.iter().map(AugStep::op));
        flags.extend(f);
        channels.push(v);
    }
    applied.sort();
    applied.dedup();
    Ok(Augmented {
        value: MultiRecord {
            subject_id: mrec.subject_id.clone(),
            label: mrec.label,
            channels,
            source: Source::Augmented,
        },
        applied,
        flags,
    })
}

/// Drawn online augmentation for one fragment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OnlinePlan {
    /// STFT frame range and bin range to zero.
    pub mask: Option<(std::ops::Range<usize>, std::ops::Range<usize>)>,
    pub stretch: Option<f64>,
}

pub fn draw_online(cfg: &AugmentConfig, len: usize, fs: u32, rng: &mut Rng) -> OnlinePlan {
    let on = &cfg.online;
    let mut plan = OnlinePlan::default();
    if fires(rng, on.mask) {
        let frames = len / on.hop + 1;
        let max_t = ((frames as f64 * on.max_time_frac).floor() as usize).max(1);
        let w = rng.gen_range(1..=max_t);
        let t0 = rng.gen_range(0..=frames.saturating_sub(w));
        let bands = 80usize;
        let max_f = on.max_mel_bands.clamp(1, bands);
        let m = rng.gen_range(1..=max_f);
        let m0 = rng.gen_range(0..=bands - m);
        let mel_hi = hz_to_mel(fs as f64 / 2.0);
        let edge = |k: usize| mel_to_hz(mel_hi * k as f64 / bands as f64);
        let bin = |hz: f64| (hz * on.window_len as f64 / fs as f64).round() as usize;
        let b0 = bin(edge(m0));
        let b1 = bin(edge(m0 + m)).max(b0 + 1);
        plan.mask = Some((t0..t0 + w, b0..b1));
    }
    if fires(rng, on.stretch) {
        plan.stretch = Some(cfg.stretch_rate.draw(rng));
    }
    plan
}

pub fn apply_online(frag: &Fragment, plan: &OnlinePlan, cfg: &AugmentConfig) -> Result<Fragment> {
    let mut out = frag.clone();
    for ch in &mut out.channels {
        if let Some((t, b)) = &plan.mask {
            *ch = ops::spectro_mask(ch, cfg.online.window_len, cfg.online.hop, t.clone(), b.clone())?;
        }
        if let Some(rate) = plan.stretch {
            *ch = ops::stretch_fixed_len(ch, rate)?;
        }
    }
    Ok(out)
}

/// Training-time augmentation; output length always equals input length.
pub fn online_augment(frag: &Fragment, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Fragment> {
    let plan = draw_online(cfg, frag.len(), frag.fs, rng);
    apply_online(frag, &plan, cfg)
}

/// Augmented copies per source subject, by label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentCounts {
    pub normal: usize,
    pub abnormal: usize,
}

impl AugmentCounts {
    pub fn for_label(&self, l: Label) -> usize {
        match l {
            Label::Normal => self.normal,
            Label::Abnormal => self.abnormal,
        }
    }
}

/// `counts[label]` augmented copies of every record. Copy `k` of subject `s`
/// uses the seed `derive_seed(seed, [s, k])`, so results do not depend on
/// record order.
pub fn make_augmented_dataset(
    records: &[MultiRecord],
    counts: AugmentCounts,
    cfg: &AugmentConfig,
    bank: &NoiseBank,
    seed: u64,
) -> Result<Vec<(MultiRecord, Provenance)>> {
    cfg.validate()?;
    let mut banks: BTreeMap<u32, NoiseBank> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in records {
        let n = counts.for_label(rec.label);
        if n == 0 {
            continue;
        }
        let fs = rec.channels[0].fs;
        if !banks.contains_key(&fs) {
            banks.insert(fs, bank.resampled(fs)?);
        }
        let local = &banks[&fs];
        for k in 0..n {
            let s = derive_seed(seed, &[&rec.subject_id, &k.to_string()]);
            let a = augment_multi(rec, cfg, local, &mut seeded(s))?;
            out.push((
                a.value,
                Provenance {
                    source_subject: Some(rec.subject_id.clone()),
                    seed: Some(s),
                    applied_ops: a.applied.iter().map(|o| o.name().to_string()).collect(),
                    ..Provenance::default()
                },
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::config::Probabilities;
    use super::*;
    use crate::rng::hash_samples;

    fn tone_rec(n: usize, fs: u32, modality: Modality) -> Recording {
        Recording::new(
            (0..n).map(|i| (i as f64 * 0.11).sin() * 0.8 + (i as f64 * 0.013).cos() * 0.2).collect(),
            fs,
            modality,
        )
    }

    fn multi(chans: usize, n: usize) -> MultiRecord {
        MultiRecord::new(
            "s0",
            Label::Abnormal,
            (0..chans).map(|_| tone_rec(n, 1000, Modality::Pcg)).collect(),
        )
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let cfg = AugmentConfig::with_probabilities(Probabilities::all(0.0));
        let bank = NoiseBank::synthetic(1000, 4.0, 1);
        let r = tone_rec(3000, 1000, Modality::Pcg);
        let a = augment_single(&r, &cfg, &bank, &mut seeded(5)).unwrap();
        assert_eq!(a.value, r);
        assert!(a.applied.is_empty());
    }

    #[test]
    fn all_ops_deterministic_given_seed() {
        let cfg = AugmentConfig::with_probabilities(Probabilities::all(1.0));
        let bank = NoiseBank::synthetic(1000, 4.0, 1);
        for m in [Modality::Pcg, Modality::Ecg] {
            let r = tone_rec(3000, 1000, m);
            let a = augment_single(&r, &cfg, &bank, &mut seeded(5)).unwrap();
            let b = augment_single(&r, &cfg, &bank, &mut seeded(5)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.applied, AugOp::ORDER.to_vec());
            assert!(a.value.samples.iter().all(|v| v.is_finite() && v.abs() <= 4.0));
        }
    }

    #[test]
    fn clinical_noise_without_bank_is_a_config_error() {
        let mut p = Probabilities::all(0.0);
        p.clinical_noise = 1.0;
        let cfg = AugmentConfig::with_probabilities(p);
        let r = tone_rec(3000, 1000, Modality::Pcg);
        let e = augment_single(&r, &cfg, &NoiseBank::default(), &mut seeded(1)).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn fire_rates_follow_config() {
        let cfg = AugmentConfig::default();
        let mut rng = seeded(77);
        let mut hits = [0usize; 7];
        let trials = 10_000;
        for _ in 0..trials {
            for s in draw_plan(&cfg, Modality::Pcg, 1000, false, &mut rng) {
                hits[AugOp::ORDER.iter().position(|&o| o == s.op()).unwrap()] += 1;
            }
        }
        for (h, p) in hits.iter().zip(cfg.probabilities.as_array()) {
            assert!((*h as f64 / trials as f64 - p).abs() < 0.02, "{h} vs {p}");
        }
    }

    #[test]
    fn shared_stretch_keeps_channels_aligned() {
        let mut p = Probabilities::all(0.0);
        p.time_stretch = 1.0;
        p.amplitude_modulation = 0.5;
        let mut cfg = AugmentConfig::with_probabilities(p);
        cfg.stretch_rate = super::super::config::Range::new(1.1, 1.1);
        let m = multi(6, 3000);
        let a = augment_multi(&m, &cfg, &NoiseBank::default(), &mut seeded(3)).unwrap();
        assert!(a.value.channels.iter().all(|c| c.len() == 2727));
        assert_eq!(a.value.source, Source::Augmented);

        let cfg = AugmentConfig::with_probabilities(Probabilities::all(0.0));
        let a = augment_multi(&m, &cfg, &NoiseBank::default(), &mut seeded(3)).unwrap();
        assert!(a.value.channels.iter().all(|c| c.len() == 3000));
    }

    #[test]
    fn multimodal_pair_shares_stretch() {
        let mut p = Probabilities::all(0.0);
        p.time_stretch = 1.0;
        let cfg = AugmentConfig::with_probabilities(p);
        let m = MultiRecord::new(
            "pair",
            Label::Normal,
            vec![tone_rec(4000, 1000, Modality::Pcg), tone_rec(4000, 1000, Modality::Ecg)],
        );
        for s in 0..10 {
            let a = augment_multi(&m, &cfg, &NoiseBank::default(), &mut seeded(s)).unwrap();
            assert_eq!(a.value.channels[0].len(), a.value.channels[1].len());
        }
    }

    #[test]
    fn online_lengths_and_identity() {
        let frag = Fragment {
            subject_id: "a".into(),
            label: Label::Normal,
            source: Source::Original,
            offset: 0,
            fs: 4125,
            channels: vec![tone_rec(8250, 4125, Modality::Pcg).samples; 2],
        };
        let none = AugmentConfig::default();
        let mut rng = seeded(0);
        let mut saw = (false, false, false);
        for _ in 0..60 {
            let plan = draw_online(&none, frag.len(), frag.fs, &mut rng);
            let out = apply_online(&frag, &plan, &none).unwrap();
            assert!(out.channels.iter().all(|c| c.len() == 8250));
            if plan == OnlinePlan::default() {
                assert_eq!(out, frag);
                saw.0 = true;
            }
            saw.1 |= plan.mask.is_some();
            saw.2 |= plan.stretch.is_some();
        }
        assert!(saw.0 && saw.1 && saw.2);
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let recs: Vec<MultiRecord> = (0..4)
            .map(|i| {
                let mut m = multi(1, 2500);
                m.subject_id = format!("s{i}");
                m.label = if i < 2 { Label::Normal } else { Label::Abnormal };
                m
            })
            .collect();
        let cfg = AugmentConfig::default();
        let bank = NoiseBank::synthetic(1000, 4.0, 2);
        let counts = AugmentCounts { normal: 3, abnormal: 2 };
        let a = make_augmented_dataset(&recs, counts, &cfg, &bank, 11).unwrap();
        assert_eq!(a.len(), 2 * 3 + 2 * 2);
        let b = make_augmented_dataset(&recs, counts, &cfg, &bank, 11).unwrap();
        let h = |d: &[(MultiRecord, Provenance)]| -> Vec<String> {
            d.iter().map(|(m, _)| hash_samples(&m.channels[0].samples)).collect()
        };
        assert_eq!(h(&a), h(&b));
        assert_eq!(a[0].1.source_subject.as_deref(), Some("s0"));
        // order-independence: reversing the inputs reproduces each copy
        let mut rev = recs.clone();
        rev.reverse();
        let c = make_augmented_dataset(&rev, counts, &cfg, &bank, 11).unwrap();
        let mut hc = h(&c);
        let mut ha = h(&a);
        hc.sort();
        ha.sort();
        assert_eq!(ha, hc);
        assert!(make_augmented_dataset(&recs, AugmentCounts::default(), &cfg, &bank, 11).unwrap().is_empty());
    }
}
