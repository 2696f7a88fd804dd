//! The eight subcommands. Each reads upstream artifacts from the run
//! directory, writes into `RUN_DIR/<command>/`, seals the stage with an
//! artifact list and returns a JSON summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cardioforge::augment::{make_augmented_dataset, AugmentCounts, NoiseBank, NoiseKind};
use cardioforge::diffusion::Generator;
use cardioforge::error::{Error, Result};
use cardioforge::eval::{report, roc, roc_bands, Level, MetricsRecord, RocCurve};
use cardioforge::fixtures::{fixture_dataset, write_records};
use cardioforge::model::{Classifier, SchedulePosition};
use cardioforge::rng::derive_seed;
use cardioforge::signal_io::{read_wav, write_wav_with, Label, Modality, MultiRecord, WavFormat};
use cardioforge::train::{DataSource, EpochLog};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{RunConfig, CONFIG_DIR_ENV};
use crate::pipeline::{self, UnitIds};
use crate::rundir::{load_records, read_json, save_records, write_json, write_text, RunDir, MANIFEST};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Flags every command accepts.
#[derive(Debug, Clone)]
pub struct Common {
    pub out: PathBuf,
    pub config: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub enum Command {
    Fixtures { n_subjects: Option<usize> },
    Preprocess { input: Option<PathBuf> },
    Augment,
    SynthTrain,
    SynthGenerate,
    Train { baseline: bool, keep_epochs: bool },
    Evaluate,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fixtures { .. } => "fixtures",
            Command::Preprocess { .. } => "preprocess",
            Command::Augment => "augment",
            Command::SynthTrain => "synth-train",
            Command::SynthGenerate => "synth-generate",
            Command::Train { .. } => "train",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

/// `--config`, else `default.toml` in the config directory, else the toy
/// preset; `--seed` overrides the file.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let spec = match &common.config {
        Some(s) => s.clone(),
        None => std::env::var_os(CONFIG_DIR_ENV)
            .map(|d| Path::new(&d).join("default.toml"))
            .filter(|p| p.is_file())
            .map_or_else(|| "toy".to_string(), |p| p.to_string_lossy().into_owned()),
    };
    let mut cfg = RunConfig::load(&spec)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.resolve()
}

pub fn run(cmd: &Command, common: &Common) -> Result<Value> {
    let cfg = load_config(common)?;
    let run = RunDir::new(&common.out);
    let name = cmd.name();
    let out = run.fresh_stage(name)?;
    write_text(out.join(RESOLVED_CONFIG), &cfg.to_toml_string()?)?;
    let mut summary = match cmd {
        Command::Fixtures { n_subjects } => fixtures(&cfg, &out, *n_subjects)?,
        Command::Preprocess { input } => preprocess(&cfg, &run, &out, input.as_deref())?,
        Command::Augment => augment(&cfg, &run, &out)?,
        Command::SynthTrain => synth_train(&cfg, &run, &out)?,
        Command::SynthGenerate => synth_generate(&cfg, &run, &out)?,
        Command::Train { baseline, keep_epochs } => train(&cfg, &run, &out, *baseline, *keep_epochs)?,
        Command::Evaluate => evaluate(&cfg, &run, &out)?,
        Command::Report => report_cmd(&run, &out)?,
    };
    let artifacts = run.seal(name)?;
    summary["command"] = json!(name);
    summary["status"] = json!("ok");
    summary["artifacts"] = json!(artifacts.len());
    Ok(summary)
}

fn fixtures(cfg: &RunConfig, out: &Path, n: Option<usize>) -> Result<Value> {
    let n = n.unwrap_or(cfg.fixtures.n_subjects);
    let recs = fixture_dataset(n, &cfg.fixtures.config, derive_seed(cfg.seed, &["fixtures"]))?;
    let entries = write_records(&out.join("data"), &recs, "fixtures")?;
    cardioforge::signal_io::write_manifest(out.join("data").join(MANIFEST), &entries)?;
    let abnormal = recs.iter().filter(|r| r.label == Label::Abnormal).count();
    Ok(json!({ "subjects": n, "abnormal": abnormal, "normal": n - abnormal }))
}

const SPLITS: &str = "splits.json";

fn preprocess(cfg: &RunConfig, run: &RunDir, out: &Path, input: Option<&Path>) -> Result<Value> {
    let manifest = match input {
        Some(p) if p.exists() => p.to_path_buf(),
        Some(p) => return Err(Error::Config(format!("input manifest {} does not exist", p.display()))),
        None => run.require(format!("fixtures/data/{MANIFEST}"), "fixtures")?,
    };
    let raw = load_records(&manifest)?;
    let recs = pipeline::preprocess_records(&raw, cfg.target_fs)?;
    for r in &recs {
        pipeline::project(r, cfg.mode)?;
    }
    let units = pipeline::make_units(&recs, cfg)?;
    let ids: Vec<UnitIds> = units.iter().map(|u| u.ids.clone()).collect();
    let with_prov: Vec<_> = recs.iter().map(|r| (r.clone(), None)).collect();
    save_records(&out.join("data"), &with_prov, "preprocessed")?;
    write_json(out.join(SPLITS), &ids)?;
    Ok(json!({ "subjects": recs.len(), "units": ids.len(), "target_fs": cfg.target_fs }))
}

struct Prepared {
    records: Vec<MultiRecord>,
    units: Vec<UnitIds>,
}

fn prepared(run: &RunDir) -> Result<Prepared> {
    let m = run.require(format!("preprocess/data/{MANIFEST}"), "preprocess")?;
    let s = run.require(format!("preprocess/{SPLITS}"), "preprocess")?;
    Ok(Prepared {
        records: load_records(&m)?,
        units: read_json(s)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseClip {
    kind: NoiseKind,
    path: String,
}

fn augment(cfg: &RunConfig, run: &RunDir, out: &Path) -> Result<Value> {
    let p = prepared(run)?;
    let bank = pipeline::noise_bank(cfg);
    let noise_dir = out.join("noise");
    std::fs::create_dir_all(&noise_dir).map_err(|e| Error::io(&noise_dir, e))?;
    let mut clips = Vec::new();
    for kind in NoiseKind::ALL {
        for (i, c) in bank.clips(kind).iter().enumerate() {
            let name = format!("{}_{i}.wav", kind_name(kind));
            write_wav_with(c, noise_dir.join(&name), WavFormat::Float32)?;
            clips.push(NoiseClip { kind, path: name });
        }
    }
    write_json(noise_dir.join("bank.json"), &clips)?;

    // a preview of the offline copies at the schedule's largest original counts
    let schedule = cfg.schedule()?;
    let counts = schedule
        .stages
        .iter()
        .flat_map(|s| s.sources.iter())
        .filter(|s| s.source == DataSource::Original)
        .map(|s| s.counts())
        .fold(AugmentCounts::default(), |a, c| AugmentCounts {
            normal: a.normal.max(c.normal),
            abnormal: a.abnormal.max(c.abnormal),
        });
    let mut copies = 0;
    for ids in &p.units {
        let unit = pipeline::unit_from_ids(&p.records, ids)?;
        let seed = derive_seed(cfg.seed, &["augment_preview", &ids.name]);
        let aug = make_augmented_dataset(&unit.train, counts, &cfg.augment, &bank, seed)?;
        copies += aug.len();
        let with_prov: Vec<_> = aug.into_iter().map(|(r, p)| (r, Some(p))).collect();
        save_records(&out.join("preview").join(&ids.name), &with_prov, "augmented")?;
    }
    Ok(json!({ "noise_clips": clips.len(), "preview_copies": copies }))
}

fn kind_name(kind: NoiseKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn load_bank(run: &RunDir) -> Result<NoiseBank> {
    let list = run.require("augment/noise/bank.json", "augment")?;
    let dir = list.parent().expect("file has a parent").to_path_buf();
    let clips: Vec<NoiseClip> = read_json(&list)?;
    let mut bank = NoiseBank::default();
    for c in clips {
        let modality = if c.kind == NoiseKind::PcgClinical { Modality::Pcg } else { Modality::Ecg };
        bank.insert(c.kind, read_wav(dir.join(&c.path), modality)?);
    }
    Ok(bank)
}

fn synth_train(cfg: &RunConfig, run: &RunDir, out: &Path) -> Result<Value> {
    let p = prepared(run)?;
    let schedule = cfg.schedule()?;
    let mut trained = BTreeMap::new();
    for ids in &p.units {
        let unit = pipeline::unit_from_ids(&p.records, ids)?;
        let gens = pipeline::train_generators(&unit.train, cfg, &schedule)?;
        let dir = out.join(&ids.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (tag, g) in &gens {
            g.save(dir.join(format!("{tag}.json")))?;
            trained.insert(format!("{}/{tag}", ids.name), g.losses.last().copied().unwrap_or(f64::NAN));
        }
    }
    Ok(json!({ "generators": trained.len(), "final_loss": trained }))
}

fn synth_generate(cfg: &RunConfig, run: &RunDir, out: &Path) -> Result<Value> {
    let p = prepared(run)?;
    let schedule = cfg.schedule()?;
    let tags: Vec<String> = pipeline::generator_configs(cfg, &schedule).into_keys().collect();
    let mut counts = BTreeMap::new();
    for ids in &p.units {
        let unit = pipeline::unit_from_ids(&p.records, ids)?;
        let mut gens = BTreeMap::new();
        for tag in &tags {
            let path = run.require(format!("synth-train/{}/{tag}.json", ids.name), "synth-train")?;
            gens.insert(tag.clone(), Generator::load(&path)?);
        }
        for (src, recs) in pipeline::synth_pools(&gens, &unit.train, cfg, &schedule)? {
            counts.insert(format!("{}/{}", ids.name, src.name()), recs.len());
            let with_prov: Vec<_> = recs.into_iter().map(|(r, p)| (r, Some(p))).collect();
            save_records(&out.join(&ids.name).join(src.name()), &with_prov, src.name())?;
        }
    }
    Ok(json!({ "subjects": counts }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunEntry {
    unit: String,
    fold: Option<usize>,
    run: usize,
    augmented: bool,
    model: String,
}

#[derive(Debug, Serialize)]
struct TrainLog<'a> {
    best_epoch: Option<usize>,
    epochs: &'a [EpochLog],
    pretrain: Vec<&'a [EpochLog]>,
}

fn train(cfg: &RunConfig, run: &RunDir, out: &Path, baseline: bool, keep_epochs: bool) -> Result<Value> {
    let p = prepared(run)?;
    let schedule = cfg.schedule()?;
    let bank = if baseline { NoiseBank::default() } else { load_bank(run)? };
    let mut entries = Vec::new();
    let mut best = BTreeMap::new();
    for ids in &p.units {
        let unit = pipeline::unit_from_ids(&p.records, ids)?;
        let mut synth = BTreeMap::new();
        if !baseline {
            for s in schedule.sources().into_iter().filter(|s| s.is_synthetic()) {
                let m = run.require(format!("synth-generate/{}/{}/{MANIFEST}", ids.name, s.name()), "synth-generate")?;
                synth.insert(s, load_records(&m)?);
            }
        }
        for r in 0..cfg.runs {
            let dir = out.join(&ids.name).join(format!("run{r}"));
            let ckpt = keep_epochs.then(|| dir.join("epochs"));
            log::info!("training {} run {r}", ids.name);
            let t = pipeline::train_run(cfg, &schedule, &unit.train, &unit.val, &synth, &bank, !baseline, r, ckpt)?;
            let pos = t.outcome.best_epoch.map_or(SchedulePosition { stage: 0, epoch: 0 }, |i| {
                let e = &t.outcome.log[i];
                SchedulePosition {
                    stage: e.stage,
                    epoch: e.epoch,
                }
            });
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            t.model.save(dir.join("model.json"), &pos)?;
            write_json(
                dir.join("log.json"),
                &TrainLog {
                    best_epoch: t.outcome.best_epoch,
                    epochs: &t.outcome.log,
                    pretrain: t.pretrain.iter().map(|o| o.log.as_slice()).collect(),
                },
            )?;
            let val_mcc = t
                .outcome
                .best_epoch
                .and_then(|i| t.outcome.log[i].val_metrics.as_ref())
                .map(|v| v.fragment.mcc);
            best.insert(format!("{}/run{r}", ids.name), json!({ "epoch": pos.epoch, "val_mcc": val_mcc }));
            entries.push(RunEntry {
                unit: ids.name.clone(),
                fold: ids.fold,
                run: r,
                augmented: !baseline,
                model: format!("train/{}/run{r}/model.json", ids.name),
            });
        }
    }
    write_json(out.join("runs.json"), &entries)?;
    Ok(json!({ "models": entries.len(), "augmented": !baseline, "best": best }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveEntry {
    level: Level,
    unit: String,
    run: usize,
    curve: RocCurve,
}

fn evaluate(cfg: &RunConfig, run: &RunDir, out: &Path) -> Result<Value> {
    let p = prepared(run)?;
    let entries: Vec<RunEntry> = read_json(run.require("train/runs.json", "train")?)?;
    let units: BTreeMap<&str, &UnitIds> = p.units.iter().map(|u| (u.name.as_str(), u)).collect();
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut curves = Vec::new();
    for e in &entries {
        let ids = units
            .get(e.unit.as_str())
            .ok_or_else(|| Error::Config(format!("trained unit {:?} is not in the current split", e.unit)))?;
        let unit = pipeline::unit_from_ids(&p.records, ids)?;
        let (model, _) = Classifier::load(run.require(&e.model, "train")?)?;
        let ev = pipeline::evaluate_run(&model, &unit.test, cfg, e.run, e.fold)?;
        let mut csv = String::from("subject_id,label,score,predicted\n");
        for s in &ev.subjects {
            csv.push_str(&format!("{},{},{},{}\n", s.subject_id, label_name(s.label), s.score, label_name(s.predicted)));
        }
        write_text(out.join(&e.unit).join(format!("run{}_subjects.csv", e.run)), &csv)?;
        let frag_labels = fragment_labels(&unit.test, cfg)?;
        let sub_scores: Vec<f64> = ev.subjects.iter().map(|s| s.score).collect();
        let sub_labels: Vec<Label> = ev.subjects.iter().map(|s| s.label).collect();
        for (level, scores, labels) in [
            (Level::Fragment, &ev.fragment_scores, &frag_labels),
            (Level::Subject, &sub_scores, &sub_labels),
        ] {
            match roc(scores, labels) {
                Ok(curve) => curves.push(CurveEntry {
                    level,
                    unit: e.unit.clone(),
                    run: e.run,
                    curve,
                }),
                Err(err) => log::warn!("no {level:?} ROC for {} run {}: {err}", e.unit, e.run),
            }
        }
        records.push(ev.fragment);
        records.push(ev.subject);
    }
    write_json(out.join("metrics.json"), &records)?;
    write_json(out.join("roc.json"), &curves)?;
    let mean_mcc = |level: Level| {
        let v: Vec<f64> = records.iter().filter(|r| r.level == level).map(|r| r.metrics.mcc).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    Ok(json!({
        "evaluations": entries.len(),
        "fragment_mcc_mean": mean_mcc(Level::Fragment),
        "subject_mcc_mean": mean_mcc(Level::Subject),
    }))
}

fn fragment_labels(test: &[MultiRecord], cfg: &RunConfig) -> Result<Vec<Label>> {
    let frags = cardioforge::train::prepare_fragments(
        &pipeline::project_all(test, cfg.mode)?,
        cfg.target_fs,
        &cfg.train.segment,
        None,
    )?;
    Ok(frags.iter().map(|f| f.label).collect())
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Normal => "normal",
        Label::Abnormal => "abnormal",
    }
}

fn report_cmd(run: &RunDir, out: &Path) -> Result<Value> {
    let records: Vec<MetricsRecord> = read_json(run.require("evaluate/metrics.json", "evaluate")?)?;
    let curves: Vec<CurveEntry> = read_json(run.require("evaluate/roc.json", "evaluate")?)?;
    let summary = report(&records)?;
    write_text(out.join("summary.csv"), &summary.to_csv())?;
    write_json(out.join("summary.json"), &summary)?;
    let mut bands = 0;
    for level in [Level::Fragment, Level::Subject] {
        let cs: Vec<RocCurve> = curves.iter().filter(|c| c.level == level).map(|c| c.curve.clone()).collect();
        if cs.len() >= 2 {
            let b = roc_bands(&cs)?;
            write_text(out.join(format!("roc_bands_{}.csv", level_name(level))), &b.to_csv())?;
            bands += 1;
        }
    }
    let mut headline = BTreeMap::new();
    for level in [Level::Fragment, Level::Subject] {
        for m in ["acc", "mcc", "uar"] {
            if let Some(v) = summary.get(level, m) {
                headline.insert(format!("{}_{m}", level_name(level)), json!({ "mean": v.mean, "std": v.std }));
            }
        }
    }
    Ok(json!({ "records": records.len(), "roc_bands": bands, "metrics": headline }))
}

fn level_name(l: Level) -> &'static str {
    match l {
        Level::Fragment => "fragment",
        Level::Subject => "subject",
    }
}
