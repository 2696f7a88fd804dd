//! In-memory stages shared by the commands and the test suites. Each
//! function takes records and a resolved [`RunConfig`]; the commands only add
//! file I/O around them.

use std::collections::BTreeMap;

use cardioforge::augment::NoiseBank;
use cardioforge::diffusion::{
    build_synthetic_corpus, examples_from_records, train_denoiser, CorpusConfig, DenoiserStyle, DenoiserTrainConfig,
    Generator,
};
use cardioforge::dsp::preprocess_chain;
use cardioforge::error::{Error, Result};
use cardioforge::fixtures::{fixture_subject, FixtureConfig, FixtureMode, VEST_SITES};
use cardioforge::model::Classifier;
use cardioforge::rng::derive_seed;
use cardioforge::signal_io::{
    fold_roles, stratified_kfold, stratified_split, Label, Modality, MultiRecord, Provenance, SplitRatios,
};
use cardioforge::train::{
    evaluate_fragments, fit_svm_head, prepare_fragments, pretrain_encoders, run_schedule, Augmentation, DataSource,
    Evaluation, TrainData, TrainOutcome, TrainingSchedule,
};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetMode, RunConfig};

/// Seconds of each synthetic noise clip.
pub const NOISE_CLIP_S: f64 = 4.0;

/// Keep the channels the classifier sees for `mode`, in input order.
pub fn project(rec: &MultiRecord, mode: DatasetMode) -> Result<MultiRecord> {
    let find = |m: Modality| {
        rec.channels
            .iter()
            .find(|c| c.modality == m)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("subject {} has no {m:?} channel", rec.subject_id)))
    };
    let channels = match mode {
        DatasetMode::SinglePcg => vec![find(Modality::Pcg)?],
        DatasetMode::Multimodal => vec![find(Modality::Pcg)?, find(Modality::Ecg)?],
        DatasetMode::Multichannel => VEST_SITES
            .iter()
            .map(|site| {
                rec.channels
                    .iter()
                    .find(|c| c.channel_site.as_deref() == Some(*site))
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("subject {} has no {site} channel", rec.subject_id)))
            })
            .collect::<Result<_>>()?,
    };
    Ok(MultiRecord {
        channels,
        ..rec.clone()
    })
}

pub fn project_all(records: &[MultiRecord], mode: DatasetMode) -> Result<Vec<MultiRecord>> {
    records.iter().map(|r| project(r, mode)).collect()
}

/// Every channel through the preprocessing chain at `target_fs`.
pub fn preprocess_records(records: &[MultiRecord], target_fs: u32) -> Result<Vec<MultiRecord>> {
    records
        .iter()
        .map(|r| {
            let channels = r
                .channels
                .iter()
                .map(|c| preprocess_chain(c, target_fs).map(|f| f.value))
                .collect::<Result<Vec<_>>>()?;
            Ok(MultiRecord {
                channels,
                ..r.clone()
            })
        })
        .collect()
}

/// Subject ids of one train/validation/test assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitIds {
    pub name: String,
    pub fold: Option<usize>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Unit {
    pub ids: UnitIds,
    pub train: Vec<MultiRecord>,
    pub val: Vec<MultiRecord>,
    pub test: Vec<MultiRecord>,
}

fn ids(records: &[MultiRecord]) -> Vec<String> {
    records.iter().map(|r| r.subject_id.clone()).collect()
}

/// One stratified split, or every rotation of a stratified k-fold.
pub fn make_units(records: &[MultiRecord], cfg: &RunConfig) -> Result<Vec<Unit>> {
    let seed = derive_seed(cfg.seed, &["split"]);
    match cfg.split.folds {
        None => {
            let ratios = SplitRatios {
                train: cfg.split.train,
                val: cfg.split.val,
                test: cfg.split.test,
            };
            let p = stratified_split(records, ratios, seed)?;
            Ok(vec![Unit {
                ids: UnitIds {
                    name: "split".into(),
                    fold: None,
                    train: ids(&p.train),
                    val: ids(&p.val),
                    test: ids(&p.test),
                },
                train: p.train,
                val: p.val,
                test: p.test,
            }])
        }
        Some(k) => {
            let folds = stratified_kfold(records, k, seed)?;
            Ok((0..k)
                .map(|i| {
                    let roles = fold_roles(k, i);
                    let train: Vec<MultiRecord> = roles.train.iter().flat_map(|&j| folds[j].clone()).collect();
                    Unit {
                        ids: UnitIds {
                            name: format!("fold{i}"),
                            fold: Some(i),
                            train: ids(&train),
                            val: ids(&folds[roles.val]),
                            test: ids(&folds[roles.test]),
                        },
                        train,
                        val: folds[roles.val].clone(),
                        test: folds[roles.test].clone(),
                    }
                })
                .collect())
        }
    }
}

/// Rebuild a unit from stored ids.
pub fn unit_from_ids(records: &[MultiRecord], ids: &UnitIds) -> Result<Unit> {
    let by_id: BTreeMap<&str, &MultiRecord> = records.iter().map(|r| (r.subject_id.as_str(), r)).collect();
    let pick = |list: &[String]| -> Result<Vec<MultiRecord>> {
        list.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| Error::Config(format!("split references unknown subject {id:?}")))
            })
            .collect()
    };
    Ok(Unit {
        train: pick(&ids.train)?,
        val: pick(&ids.val)?,
        test: pick(&ids.test)?,
        ids: ids.clone(),
    })
}

pub fn noise_bank(cfg: &RunConfig) -> NoiseBank {
    NoiseBank::synthetic(cfg.target_fs, NOISE_CLIP_S, derive_seed(cfg.seed, &["noise_bank"]))
}

/// Generator settings needed by the synthetic sources of `schedule`, keyed
/// by generator tag.
pub fn generator_configs(cfg: &RunConfig, schedule: &TrainingSchedule) -> BTreeMap<String, DenoiserTrainConfig> {
    let mut out = BTreeMap::new();
    for src in schedule.sources() {
        let mut g = cfg.synth.generator.clone();
        g.seed = derive_seed(cfg.seed, &["generator", src.name()]);
        match src {
            DataSource::Original => continue,
            DataSource::DiffWave => g.denoiser.style = DenoiserStyle::DiffWave,
            DataSource::WaveGrad => g.denoiser.style = DenoiserStyle::WaveGrad,
            DataSource::TrainingASynth | DataSource::TrainingBSynth => {
                g.seed = derive_seed(cfg.seed, &["generator", "multichannel"]);
                g.denoiser.sites = VEST_SITES.iter().map(|s| s.to_string()).collect();
            }
        }
        out.insert(g.denoiser.style.tag().to_string(), g);
    }
    out
}

/// Train every generator the schedule needs on the training subjects.
pub fn train_generators(
    train: &[MultiRecord],
    cfg: &RunConfig,
    schedule: &TrainingSchedule,
) -> Result<BTreeMap<String, Generator>> {
    let mut out = BTreeMap::new();
    for (tag, g) in generator_configs(cfg, schedule) {
        let ex = examples_from_records(train, &g.denoiser.sites, g.fs)?;
        log::info!("training generator {tag} on {} examples", ex.len());
        out.insert(tag, train_denoiser(&ex, &g)?);
    }
    Ok(out)
}

fn source_style(src: DataSource) -> DenoiserStyle {
    match src {
        DataSource::WaveGrad => DenoiserStyle::WaveGrad,
        _ => DenoiserStyle::DiffWave,
    }
}

/// Stand-in for an external single-channel PCG set: fixture subjects whose
/// PCG is tagged with the conditioning site.
pub fn external_conditioning_set(cfg: &RunConfig, set: &str) -> Result<Vec<MultiRecord>> {
    let site = cfg.synth.corpus.cond_site.clone().unwrap_or_else(|| VEST_SITES[0].to_string());
    let fx = FixtureConfig {
        mode: FixtureMode::Multimodal,
        ..cfg.fixtures.config
    };
    let seed = derive_seed(cfg.seed, &["external", set]);
    (0..cfg.synth.cond_subjects)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
            let r = fixture_subject(&format!("ext{set}-{i:03}"), label, &fx, seed)?;
            let pcg = r.channels.into_iter().find(|c| c.modality == Modality::Pcg).expect("fixture has a PCG");
            Ok(MultiRecord::new(r.subject_id, label, vec![pcg.with_site(site.clone())]))
        })
        .collect()
}

/// Synthetic subjects for one schedule source.
pub fn synth_source(
    src: DataSource,
    gens: &BTreeMap<String, Generator>,
    train: &[MultiRecord],
    cfg: &RunConfig,
) -> Result<Vec<(MultiRecord, Provenance)>> {
    let tag = source_style(src).tag();
    let gen = gens
        .get(tag)
        .ok_or_else(|| Error::Config(format!("no {tag} generator for source {:?}", src.name())))?;
    let corpus = CorpusConfig {
        seed: derive_seed(cfg.seed, &["corpus", src.name()]),
        ..cfg.synth.corpus.clone()
    };
    let mut out = match src {
        DataSource::Original => return Err(Error::Argument("original data is not synthesized".into())),
        DataSource::DiffWave | DataSource::WaveGrad => build_synthetic_corpus(gen, train, &corpus)?,
        DataSource::TrainingASynth => build_synthetic_corpus(gen, &external_conditioning_set(cfg, "a")?, &corpus)?,
        DataSource::TrainingBSynth => build_synthetic_corpus(gen, &external_conditioning_set(cfg, "b")?, &corpus)?,
    };
    // ids must not collide between sources sharing a generator
    for (r, _) in &mut out {
        r.subject_id = format!("{}-{}", src.name(), r.subject_id);
    }
    Ok(out)
}

/// Every synthetic pool the schedule references.
pub fn synth_pools(
    gens: &BTreeMap<String, Generator>,
    train: &[MultiRecord],
    cfg: &RunConfig,
    schedule: &TrainingSchedule,
) -> Result<BTreeMap<DataSource, Vec<(MultiRecord, Provenance)>>> {
    schedule
        .sources()
        .into_iter()
        .filter(|s| s.is_synthetic())
        .map(|s| Ok((s, synth_source(s, gens, train, cfg)?)))
        .collect()
}

/// A trained model plus what produced it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Classifier,
    pub outcome: TrainOutcome,
    pub pretrain: Vec<TrainOutcome>,
}

/// Train one run. `augmented = false` gives the baseline: the schedule's
/// stage lengths on original data only, without online augmentation.
#[allow(clippy::too_many_arguments)]
pub fn train_run(
    cfg: &RunConfig,
    schedule: &TrainingSchedule,
    train: &[MultiRecord],
    val: &[MultiRecord],
    synth: &BTreeMap<DataSource, Vec<MultiRecord>>,
    bank: &NoiseBank,
    augmented: bool,
    run: usize,
    checkpoint_dir: Option<std::path::PathBuf>,
) -> Result<Trained> {
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(cfg.seed, &["run", &run.to_string()]);
    tc.checkpoint_dir = checkpoint_dir;
    let schedule = if augmented {
        schedule.clone()
    } else {
        tc.online_augment = false;
        schedule.without_augmentation()
    };
    let mut pools = BTreeMap::new();
    pools.insert(DataSource::Original, project_all(train, cfg.mode)?);
    for s in schedule.sources().into_iter().filter(|s| s.is_synthetic()) {
        let recs = synth
            .get(&s)
            .ok_or_else(|| Error::Config(format!("schedule needs synthetic source {:?}", s.name())))?;
        pools.insert(s, project_all(recs, cfg.mode)?);
    }
    let data = TrainData {
        pools,
        val: prepare_fragments(&project_all(val, cfg.mode)?, tc.target_fs, &tc.segment, None)?,
    };
    let aug = augmented.then(|| Augmentation {
        config: cfg.augment,
        bank: bank.clone(),
    });
    let mut model = Classifier::new(cfg.model_config()?, derive_seed(tc.seed, &["init"]))?;
    let pretrain = if model.config.n_inputs > 1 {
        pretrain_encoders(&mut model, &schedule, &data, aug.as_ref(), &tc)?
    } else {
        Vec::new()
    };
    let outcome = run_schedule(&mut model, &schedule, &data, aug.as_ref(), &tc)?;
    let mut best = outcome.best.clone();
    if let Some(svm) = &tc.svm {
        let frags = prepare_fragments(&data.pools[&DataSource::Original], tc.target_fs, &tc.segment, None)?;
        fit_svm_head(&mut best, &frags, svm)?;
    }
    Ok(Trained {
        model: best,
        outcome,
        pretrain,
    })
}

pub fn evaluate_run(
    model: &Classifier,
    test: &[MultiRecord],
    cfg: &RunConfig,
    run: usize,
    fold: Option<usize>,
) -> Result<Evaluation> {
    let frags = prepare_fragments(&project_all(test, cfg.mode)?, cfg.target_fs, &cfg.train.segment, None)?;
    evaluate_fragments(model, &frags, run, fold)
}
