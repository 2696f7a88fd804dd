use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::denoiser::CondLabel;
use super::sample::sample_waveform;
use super::trainer::{generator_input, Generator};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::signal_io::{apportion, Label, Modality, MultiRecord, Provenance, Recording, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Single-channel mode only; multichannel emits one subject per
    /// conditioning subject.
    pub n_patients: usize,
    /// Normal : abnormal.
    pub class_ratio: (usize, usize),
    /// Upper bound on generated length.
    pub max_len_s: f64,
    /// Multichannel conditioning site; the first known site when unset.
    pub cond_site: Option<String>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_patients: 8,
            class_ratio: (3, 1),
            max_len_s: 8.0,
            cond_site: None,
            seed: 0,
        }
    }
}

fn crop(x: Vec<f64>, max_len: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    if x.len() <= max_len {
        return x;
    }
    let off = rng.gen_range(0..=x.len() - max_len);
    x[off..off + max_len].to_vec()
}

/// Generator targets live in [-1, 1]; samples are clipped back into it.
fn clamp_unit(mut x: Vec<f64>) -> Vec<f64> {
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    x
}

/// Synthetic subjects from a trained generator, each with provenance.
///
/// Single-channel mode draws `n_patients` PCG recordings at the configured
/// class ratio, each conditioned on an ECG from a source subject of the same
/// class (any class if none match); the ECG is kept as the second channel.
/// Multichannel mode creates one subject per conditioning subject,
/// generating every other known site from the conditioning site.
pub fn build_synthetic_corpus(
    gen: &Generator,
    cond_source: &[MultiRecord],
    cfg: &CorpusConfig,
) -> Result<Vec<(MultiRecord, Provenance)>> {
    if !(cfg.max_len_s > 0.0) {
        return Err(Error::Config("max_len_s must be positive".into()));
    }
    let max_len = (cfg.max_len_s * gen.fs as f64).round() as usize;
    if gen.denoiser.config.sites.is_empty() {
        single_channel(gen, cond_source, cfg, max_len)
    } else {
        multichannel(gen, cond_source, cfg, max_len)
    }
}

fn single_channel(
    gen: &Generator,
    cond_source: &[MultiRecord],
    cfg: &CorpusConfig,
    max_len: usize,
) -> Result<Vec<(MultiRecord, Provenance)>> {
    if cfg.n_patients == 0 {
        return Ok(Vec::new());
    }
    let (rn, ra) = cfg.class_ratio;
    if rn + ra == 0 {
        return Err(Error::Config("class ratio must not be 0:0".into()));
    }
    let with_ecg: Vec<&MultiRecord> = cond_source
        .iter()
        .filter(|r| r.channels.iter().any(|c| c.modality == Modality::Ecg))
        .collect();
    if with_ecg.is_empty() {
        return Err(Error::Config("no conditioning ECG available for synthesis".into()));
    }
    let counts = apportion(cfg.n_patients, &[rn as f64, ra as f64]);
    let mut out = Vec::with_capacity(cfg.n_patients);
    let mut rng = seeded(derive_seed(cfg.seed, &["corpus", &gen.tag]));
    let mut idx = 0usize;
    for (class, &count) in counts.iter().enumerate() {
        let label = Label::from_index(class);
        let mut pool: Vec<&MultiRecord> = with_ecg.iter().copied().filter(|r| r.label == label).collect();
        if pool.is_empty() {
            pool = with_ecg.clone();
        }
        pool.shuffle(&mut rng);
        for k in 0..count {
            let src = pool[k % pool.len()];
            let seed = derive_seed(cfg.seed, &[&gen.tag, &idx.to_string()]);
            let mut prng = seeded(seed);
            let ecg = src.channels.iter().find(|c| c.modality == Modality::Ecg).expect("filtered");
            let cond = crop(generator_input(ecg, gen.fs)?, max_len, &mut prng);
            let conditioning = gen.conditioning(Some(&cond), CondLabel::disease(label))?;
            let pcg = clamp_unit(sample_waveform(&gen.denoiser, &conditioning, &gen.schedule, cond.len(), &mut prng)?);
            let id = format!("syn-{}-{idx:04}", gen.tag);
            let mut rec = MultiRecord::new(
                id,
                label,
                vec![
                    Recording::new(pcg, gen.fs, Modality::Pcg),
                    Recording::new(cond, gen.fs, Modality::Ecg),
                ],
            );
            rec.source = Source::Synthetic(gen.tag.clone());
            out.push((
                rec,
                Provenance {
                    seed: Some(seed),
                    generator_tag: Some(gen.tag.clone()),
                    cond_subject: Some(src.subject_id.clone()),
                    ..Provenance::default()
                },
            ));
            idx += 1;
        }
    }
    Ok(out)
}

fn multichannel(
    gen: &Generator,
    cond_source: &[MultiRecord],
    cfg: &CorpusConfig,
    max_len: usize,
) -> Result<Vec<(MultiRecord, Provenance)>> {
    let sites = &gen.denoiser.config.sites;
    if let Some(s) = &cfg.cond_site {
        if !sites.contains(s) {
            return Err(Error::Config(format!("conditioning site {s:?} unknown to the generator")));
        }
    }
    let mut out = Vec::with_capacity(cond_source.len());
    for src in cond_source {
        let site_of = |c: &Recording| c.channel_site.clone().filter(|s| sites.contains(s));
        let cond_ch = match &cfg.cond_site {
            Some(s) => src.channels.iter().find(|c| c.channel_site.as_ref() == Some(s)),
            None => src.channels.iter().find(|c| site_of(c).is_some()),
        }
        .ok_or_else(|| Error::Config(format!("subject {} lacks the conditioning site", src.subject_id)))?;
        let cond_site = cond_ch.channel_site.clone().expect("site checked");
        let seed = derive_seed(cfg.seed, &[&gen.tag, &src.subject_id]);
        let mut rng = seeded(seed);
        let cond = crop(generator_input(cond_ch, gen.fs)?, max_len, &mut rng);
        let mut channels = Vec::with_capacity(sites.len());
        let mut pairs = Vec::new();
        for site in sites.iter().cloned() {
            if site == cond_site {
                channels.push(Recording::new(cond.clone(), gen.fs, Modality::Pcg).with_site(site));
                continue;
            }
            let label = CondLabel::pair(src.label, cond_site.clone(), site.clone());
            let c = gen.conditioning(Some(&cond), label)?;
            let x = clamp_unit(sample_waveform(&gen.denoiser, &c, &gen.schedule, cond.len(), &mut rng)?);
            channels.push(Recording::new(x, gen.fs, Modality::Pcg).with_site(site.clone()));
            pairs.push((cond_site.clone(), site));
        }
        let mut rec = MultiRecord::new(format!("syn-{}-{}", gen.tag, src.subject_id), src.label, channels);
        rec.source = Source::Synthetic(gen.tag.clone());
        out.push((
            rec,
            Provenance {
                seed: Some(seed),
                generator_tag: Some(gen.tag.clone()),
                cond_subject: Some(src.subject_id.clone()),
                channel_pair: pairs,
                ..Provenance::default()
            },
        ));
    }
    Ok(out)
}
