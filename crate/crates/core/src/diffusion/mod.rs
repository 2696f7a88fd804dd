//! Conditional waveform diffusion: noise schedules, toy denoisers, the
//! noise-prediction loss, ancestral sampling, cycle rearrangement and
//! synthetic corpus generation.

mod corpus;
mod denoiser;
mod loss;
mod rearrange;
mod sample;
mod schedule;
mod trainer;

pub use corpus::{build_synthetic_corpus, CorpusConfig};
pub use denoiser::{CondLabel, Conditioning, ConvDenoiser, Denoiser, DenoiserConfig, DenoiserStyle};
pub use loss::{diffusion_loss, diffusion_loss_at, diffusion_loss_batch, LossOutput};
pub use rearrange::{
    apply_rearrangement, cycle_rearrange, detect_cycle_marks, draw_rearrangement, RearrangeMode, RearrangePlan,
    CROSSFADE_S,
};
pub use sample::{sample, sample_waveform, DIVERGENCE_LIMIT};
pub use schedule::{forward_diffuse, forward_diffuse_with, NoiseSchedule, ScheduleConfig, MAX_TERMINAL_ALPHA_BAR};
pub use trainer::{
    examples_from_records, generator_input, mel_conditioning, train_denoiser, DenoiserExample, DenoiserTrainConfig,
    Generator, CHECKPOINT_VERSION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::signal_io::{Label, Modality, MultiRecord, Recording, Source};

    fn beat_signal(fs: u32, secs: f64, murmur: bool, phase: f64) -> Vec<f64> {
        let n = (fs as f64 * secs) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / fs as f64 + phase;
                let c = t % 0.8;
                let s1 = (-((c - 0.1) / 0.02).powi(2)).exp() * (2.0 * std::f64::consts::PI * 50.0 * t).sin();
                let s2 = 0.6 * (-((c - 0.4) / 0.015).powi(2)).exp() * (2.0 * std::f64::consts::PI * 70.0 * t).sin();
                let m = if murmur { 0.2 * (2.0 * std::f64::consts::PI * 150.0 * t).sin() * (c < 0.35) as u8 as f64 } else { 0.0 };
                s1 + s2 + m
            })
            .collect()
    }

    fn ecg_signal(fs: u32, secs: f64, phase: f64) -> Vec<f64> {
        let n = (fs as f64 * secs) as usize;
        (0..n)
            .map(|i| {
                let t = (i as f64 / fs as f64 + phase) % 0.8;
                (-((t - 0.08) / 0.01).powi(2)).exp() + 0.2 * (-((t - 0.35) / 0.05).powi(2)).exp()
            })
            .collect()
    }

    fn subjects(n: usize) -> Vec<MultiRecord> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
                let ph = i as f64 * 0.13;
                MultiRecord::new(
                    format!("s{i}"),
                    label,
                    vec![
                        Recording::new(beat_signal(2000, 3.0, label == Label::Abnormal, ph), 2000, Modality::Pcg),
                        Recording::new(ecg_signal(2000, 3.0, ph), 2000, Modality::Ecg),
                    ],
                )
            })
            .collect()
    }

    fn tiny_train_config(style: DenoiserStyle, sites: Vec<String>) -> DenoiserTrainConfig {
        DenoiserTrainConfig {
            denoiser: DenoiserConfig {
                style,
                layers: 2,
                channels: 4,
                embed_dim: 4,
                n_mels: 8,
                sites,
                ..DenoiserConfig::default()
            },
            steps: 6,
            batch_size: 2,
            crop_len: 1024,
            seed: 3,
            ..DenoiserTrainConfig::default()
        }
    }

    #[test]
    fn single_channel_corpus_follows_ratio() {
        let recs = subjects(4);
        let ex = examples_from_records(&recs, &[], 1000).unwrap();
        assert_eq!(ex.len(), 4);
        assert_eq!(ex[0].target.len(), 3000);
        let gen = train_denoiser(&ex, &tiny_train_config(DenoiserStyle::WaveGrad, vec![])).unwrap();
        assert_eq!(gen.losses.len(), 6);
        assert!(gen.losses.iter().all(|l| l.is_finite()));
        let cfg = CorpusConfig {
            n_patients: 8,
            max_len_s: 1.5,
            ..CorpusConfig::default()
        };
        let corpus = build_synthetic_corpus(&gen, &recs, &cfg).unwrap();
        assert_eq!(corpus.len(), 8);
        let normals = corpus.iter().filter(|(r, _)| r.label == Label::Normal).count();
        assert_eq!(normals, 6);
        for (r, p) in &corpus {
            assert_eq!(r.source, Source::Synthetic("wavegrad_style".into()));
            assert_eq!(r.channels.len(), 2);
            assert_eq!(r.channels[0].len(), 1500);
            assert!(r.channels[0].samples.iter().all(|v| v.abs() <= 1.0));
            assert_eq!(p.generator_tag.as_deref(), Some("wavegrad_style"));
            assert!(p.cond_subject.is_some());
        }
        let again = build_synthetic_corpus(&gen, &recs, &cfg).unwrap();
        assert_eq!(corpus, again);
        assert!(build_synthetic_corpus(&gen, &recs, &CorpusConfig { n_patients: 0, ..cfg.clone() })
            .unwrap()
            .is_empty());

        let no_ecg: Vec<MultiRecord> = recs
            .iter()
            .map(|r| MultiRecord::new(r.subject_id.clone(), r.label, vec![r.channels[0].clone()]))
            .collect();
        assert!(matches!(build_synthetic_corpus(&gen, &no_ecg, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn multichannel_corpus_has_one_subject_per_source() {
        let sites: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let recs: Vec<MultiRecord> = (0..5)
            .map(|i| {
                let label = if i < 3 { Label::Normal } else { Label::Abnormal };
                let chans = sites
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        Recording::new(beat_signal(2000, 2.0, i >= 3, 0.05 * k as f64), 2000, Modality::Pcg).with_site(s.clone())
                    })
                    .collect();
                MultiRecord::new(format!("m{i}"), label, chans)
            })
            .collect();
        let ex = examples_from_records(&recs, &sites, 1000).unwrap();
        assert_eq!(ex.len(), 5 * 6);
        let gen = train_denoiser(&ex, &tiny_train_config(DenoiserStyle::DiffWave, sites.clone())).unwrap();
        let cfg = CorpusConfig {
            max_len_s: 1.0,
            cond_site: Some("b".into()),
            ..CorpusConfig::default()
        };
        let corpus = build_synthetic_corpus(&gen, &recs, &cfg).unwrap();
        assert_eq!(corpus.len(), 5);
        for (r, p) in &corpus {
            assert_eq!(r.channels.len(), 3);
            assert!(r.is_aligned());
            assert_eq!(p.channel_pair, vec![("b".to_string(), "a".to_string()), ("b".to_string(), "c".to_string())]);
        }
        let bad = CorpusConfig {
            cond_site: Some("zz".into()),
            ..cfg
        };
        assert!(matches!(build_synthetic_corpus(&gen, &recs, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn generator_checkpoint_round_trips() {
        let recs = subjects(2);
        let ex = examples_from_records(&recs, &[], 1000).unwrap();
        let mut cfg = tiny_train_config(DenoiserStyle::DiffWave, vec![]);
        cfg.steps = 2;
        let gen = train_denoiser(&ex, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gen.json");
        gen.save(&p).unwrap();
        let back = Generator::load(&p).unwrap();
        assert_eq!(gen, back);
        std::fs::write(&p, "{").unwrap();
        assert!(matches!(Generator::load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let recs = subjects(2);
        let ex = examples_from_records(&recs, &[], 1000).unwrap();
        let mut cfg = tiny_train_config(DenoiserStyle::WaveGrad, vec![]);
        cfg.rearrange_prob = 1.0;
        let a = train_denoiser(&ex, &cfg).unwrap();
        let b = train_denoiser(&ex, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
