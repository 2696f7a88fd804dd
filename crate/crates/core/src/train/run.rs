//! Staged training of the classifier.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{lr_at, optimizer_step, LrSchedule, OptimizerConfig, OptimizerState};
use super::schedule::{DataSource, TrainingSchedule};
use crate::augment::{make_augmented_dataset, online_augment, AugmentConfig, NoiseBank};
use crate::dsp::{preprocess_chain, segment, SegmentSpec};
use crate::error::{Error, Result};
use crate::eval::{aggregate_subject, group_by_subject, ConfusionCounts, Level, Metrics, MetricsRecord, SubjectPrediction};
use crate::model::{svm_fit, Classifier, SchedulePosition, SvmConfig};
use crate::nn::{Grads, Mat};
use crate::rng::{derive_seed, seeded};
use crate::signal_io::{Fragment, Label, MultiRecord, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub lr_schedule: LrSchedule,
    pub target_fs: u32,
    pub segment: SegmentSpec,
    /// Fragments kept per synthetic subject.
    pub synthetic_cap: usize,
    pub online_augment: bool,
    /// Weight the loss of each class by `N / (2·N_class)` over the stage pool.
    pub class_weighted: bool,
    /// Fit an RBF SVM on the first hidden layer after training.
    pub svm: Option<SvmConfig>,
    pub seed: u64,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule::default(),
            target_fs: 1000,
            segment: SegmentSpec::default(),
            synthetic_cap: 2,
            online_augment: true,
            class_weighted: true,
            svm: None,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.lr_schedule.validate()?;
        self.segment.validate()?;
        if self.target_fs == 0 {
            return Err(Error::Config("target_fs must be positive".into()));
        }
        Ok(())
    }
}

/// Raw training pools per source and the validation fragments.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub pools: BTreeMap<DataSource, Vec<MultiRecord>>,
    /// Preprocessed original-data fragments.
    pub val: Vec<Fragment>,
}

/// Offline and online augmentation settings shared by every stage.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub config: AugmentConfig,
    pub bank: NoiseBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub fragment: Metrics,
    pub subject: Metrics,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: usize,
    /// Epoch index over the whole schedule.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_fragments: usize,
    pub val_metrics: Option<ValMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Index into `log` of the selected epoch, if any epoch ran.
    pub best_epoch: Option<usize>,
    /// Weights at the selected epoch (the input model when nothing ran).
    pub best: Classifier,
}

/// Resample, band-limit, normalize and cut every record. At most `cap`
/// fragments are kept per record when given.
pub fn prepare_fragments(records: &[MultiRecord], target_fs: u32, spec: &SegmentSpec, cap: Option<usize>) -> Result<Vec<Fragment>> {
    let mut out = Vec::new();
    for r in records {
        let channels = r
            .channels
            .iter()
            .map(|c| preprocess_chain(c, target_fs).map(|f| f.value))
            .collect::<Result<Vec<_>>>()?;
        let rec = MultiRecord {
            channels,
            ..r.clone()
        };
        let frags = segment(&rec, spec)?.value;
        let n = cap.unwrap_or(frags.len()).min(frags.len());
        out.extend(frags.into_iter().take(n));
    }
    Ok(out)
}

fn class_weights(frags: &[Fragment], on: bool) -> [f64; 2] {
    let mut n = [0usize; 2];
    for f in frags {
        n[f.label.index()] += 1;
    }
    let total = (n[0] + n[1]) as f64;
    if !on || n[0] == 0 || n[1] == 0 {
        return [1.0, 1.0];
    }
    [total / (2.0 * n[0] as f64), total / (2.0 * n[1] as f64)]
}

fn inputs(f: &Fragment) -> Vec<&[f64]> {
    f.channels.iter().map(|c| c.as_slice()).collect()
}

/// Abnormal-class probability of every fragment.
pub fn predict_fragments(model: &Classifier, frags: &[Fragment]) -> Result<Vec<f64>> {
    frags.iter().map(|f| Ok(model.predict(&inputs(f))?.probs[1])).collect()
}

/// Fragment and subject level results of one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub fragment: MetricsRecord,
    pub subject: MetricsRecord,
    pub fragment_scores: Vec<f64>,
    pub subjects: Vec<SubjectPrediction>,
}

pub fn evaluate_fragments(model: &Classifier, frags: &[Fragment], run: usize, fold: Option<usize>) -> Result<Evaluation> {
    let scores = predict_fragments(model, frags)?;
    evaluate_scores(frags, scores, run, fold)
}

/// Metrics from precomputed fragment scores (subject threshold 0.5).
pub fn evaluate_scores(frags: &[Fragment], scores: Vec<f64>, run: usize, fold: Option<usize>) -> Result<Evaluation> {
    let pred = |p: f64| if p >= 0.5 { Label::Abnormal } else { Label::Normal };
    let fc = ConfusionCounts::from_pairs(frags.iter().zip(&scores).map(|(f, &p)| (f.label, pred(p))));
    let groups = group_by_subject(frags.iter().zip(&scores).map(|(f, &p)| (f.subject_id.as_str(), f.label, p)))?;
    let subjects = aggregate_subject(&groups, 0.5)?;
    let sc = ConfusionCounts::from_pairs(subjects.iter().map(|s| (s.label, s.predicted)));
    Ok(Evaluation {
        fragment: MetricsRecord::new(Level::Fragment, fc, run, fold)?,
        subject: MetricsRecord::new(Level::Subject, sc, run, fold)?,
        fragment_scores: scores,
        subjects,
    })
}

/// Index of the highest validation MCC; ties go to the later entry.
pub fn select_best(val_mcc: &[f64]) -> Result<usize> {
    if val_mcc.is_empty() {
        return Err(Error::Argument("no checkpoints to select from".into()));
    }
    let mut best = 0;
    for (i, m) in val_mcc.iter().enumerate() {
        if *m >= val_mcc[best] {
            best = i;
        }
    }
    Ok(best)
}

fn stage_pool(
    stage_idx: usize,
    stage: &super::schedule::ScheduleStage,
    data: &TrainData,
    aug: Option<&Augmentation>,
    cfg: &TrainConfig,
) -> Result<Vec<Fragment>> {
    let mut pool = Vec::new();
    for src in &stage.sources {
        let recs = data.pools.get(&src.source).ok_or_else(|| {
            Error::Config(format!("stage {stage_idx} needs data source {:?}, which was not provided", src.source.name()))
        })?;
        let cap = src.source.is_synthetic().then_some(cfg.synthetic_cap);
        pool.extend(prepare_fragments(recs, cfg.target_fs, &cfg.segment, cap)?);
        let counts = src.counts();
        if let (Some(a), true) = (aug, counts.normal + counts.abnormal > 0) {
            let seed = derive_seed(cfg.seed, &["stage", &stage_idx.to_string(), src.source.name()]);
            let copies: Vec<MultiRecord> = make_augmented_dataset(recs, counts, &a.config, &a.bank, seed)?
                .into_iter()
                .map(|(r, _)| r)
                .collect();
            pool.extend(prepare_fragments(&copies, cfg.target_fs, &cfg.segment, cap)?);
        }
    }
    Ok(pool)
}

fn accumulate(acc: &mut [Option<Mat>], g: Grads, scale: f64) {
    for (slot, g) in acc.iter_mut().zip(g.by_param) {
        let Some(mut g) = g else { continue };
        g.scale(scale);
        match slot {
            Some(a) => a.add_assign(&g),
            None => *slot = Some(g),
        }
    }
}

/// Run every stage in order. The returned best model is the epoch with the
/// highest fragment-level validation MCC; without validation data the
/// last epoch is kept.
pub fn run_schedule(
    model: &mut Classifier,
    schedule: &TrainingSchedule,
    data: &TrainData,
    aug: Option<&Augmentation>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    for s in schedule.sources() {
        if !data.pools.contains_key(&s) {
            return Err(Error::Config(format!("schedule uses data source {:?}, which was not provided", s.name())));
        }
    }
    if data.val.iter().any(|f| f.source != Source::Original) {
        return Err(Error::Config("validation fragments must come from original data".into()));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut state = OptimizerState::default();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Classifier)> = None;
    let mut epoch = 0;
    for (si, stage) in schedule.stages.iter().enumerate() {
        let pool = stage_pool(si, stage, data, aug, cfg)?;
        if pool.is_empty() {
            return Err(Error::Config(format!("stage {si} produced no training fragments")));
        }
        let weights = class_weights(&pool, cfg.class_weighted);
        for _ in 0..stage.epochs {
            let lr = lr_at(epoch, cfg.optimizer.learning_rate, &cfg.lr_schedule);
            let mut rng = seeded(derive_seed(cfg.seed, &["epoch", &epoch.to_string()]));
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.optimizer.batch_size.max(1)) {
                let scale = 1.0 / batch.len() as f64;
                let mut acc: Vec<Option<Mat>> = vec![None; model.params().len()];
                for &i in batch {
                    let frag = if cfg.online_augment {
                        match aug {
                            Some(a) => online_augment(&pool[i], &a.config, &mut rng)?,
                            None => pool[i].clone(),
                        }
                    } else {
                        pool[i].clone()
                    };
                    let w = weights[frag.label.index()];
                    let (loss, g) = model.loss_and_grads(&inputs(&frag), frag.label, w)?;
                    total += loss;
                    accumulate(&mut acc, g, scale);
                }
                optimizer_step(model.params_mut(), &Grads { by_param: acc }, &mut state, &cfg.optimizer, lr)?;
            }
            let val_metrics = if data.val.is_empty() {
                None
            } else {
                let e = evaluate_fragments(model, &data.val, 0, None)?;
                Some(ValMetrics {
                    fragment: e.fragment.metrics,
                    subject: e.subject.metrics,
                })
            };
            let mcc = val_metrics.as_ref().map_or(f64::NEG_INFINITY, |v| v.fragment.mcc);
            if best.as_ref().map_or(true, |(_, m, _)| mcc >= *m) {
                best = Some((log.len(), mcc, model.clone()));
            }
            if let Some(dir) = &cfg.checkpoint_dir {
                let pos = SchedulePosition { stage: si, epoch };
                model.save(dir.join(format!("epoch_{epoch:03}.json")), &pos)?;
            }
            log.push(EpochLog {
                stage: si,
                epoch,
                lr,
                train_loss: total / pool.len() as f64,
                train_fragments: pool.len(),
                val_metrics,
            });
            epoch += 1;
        }
    }
    let (best_epoch, best) = match best {
        Some((i, _, m)) => (Some(i), m),
        None => (None, model.clone()),
    };
    Ok(TrainOutcome { log, best_epoch, best })
}

/// Fit the SVM head on first-hidden-layer features of `frags`.
pub fn fit_svm_head(model: &mut Classifier, frags: &[Fragment], cfg: &SvmConfig) -> Result<()> {
    model.svm = None;
    let mut x = Vec::with_capacity(frags.len());
    for f in frags {
        x.push(model.predict(&inputs(f))?.penultimate);
    }
    let labels: Vec<Label> = frags.iter().map(|f| f.label).collect();
    model.svm = Some(svm_fit(&x, &labels, cfg)?);
    Ok(())
}

/// Train one single-input model per channel on the first stage only and
/// copy its encoder into the matching slot of `model`.
pub fn pretrain_encoders(
    model: &mut Classifier,
    schedule: &TrainingSchedule,
    data: &TrainData,
    aug: Option<&Augmentation>,
    cfg: &TrainConfig,
) -> Result<Vec<TrainOutcome>> {
    let Some(first) = schedule.stages.first() else {
        return Ok(Vec::new());
    };
    let one = TrainingSchedule {
        name: format!("{}_stage0", schedule.name),
        stages: vec![first.clone()],
    };
    let mut outcomes = Vec::new();
    for ch in 0..model.config.n_inputs {
        let mut sub_cfg = model.config.clone();
        sub_cfg.n_inputs = 1;
        sub_cfg.lora = None;
        sub_cfg.freeze_encoders = false;
        let mut single = Classifier::new(sub_cfg, derive_seed(cfg.seed, &["pretrain", &ch.to_string()]))?;
        let project = |r: &MultiRecord| -> Result<MultiRecord> {
            let c = r
                .channels
                .get(ch)
                .ok_or_else(|| Error::Config(format!("subject {} has no channel {ch}", r.subject_id)))?;
            Ok(MultiRecord {
                channels: vec![c.clone()],
                ..r.clone()
            })
        };
        let sub = TrainData {
            pools: data
                .pools
                .iter()
                .map(|(k, v)| Ok((*k, v.iter().map(project).collect::<Result<Vec<_>>>()?)))
                .collect::<Result<_>>()?,
            val: data
                .val
                .iter()
                .map(|f| Fragment {
                    channels: vec![f.channels[ch].clone()],
                    ..f.clone()
                })
                .collect(),
        };
        let sub_run = TrainConfig {
            checkpoint_dir: None,
            svm: None,
            ..cfg.clone()
        };
        let out = run_schedule(&mut single, &one, &sub, aug, &sub_run)?;
        model.copy_encoder_from(ch, &out.best, 0)?;
        outcomes.push(out);
    }
    Ok(outcomes)
}
