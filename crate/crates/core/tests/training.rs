use std::collections::BTreeMap;

use cardioforge::fixtures::{fixture_dataset, FixtureConfig};
use cardioforge::model::{Classifier, HeadConfig, ModelConfig};
use cardioforge::signal_io::{Modality, MultiRecord};
use cardioforge::train::{
    prepare_fragments, run_schedule, DataSource, OptimizerConfig, OptimizerKind, TrainConfig, TrainData,
    TrainingSchedule,
};

fn pcg_only(records: Vec<MultiRecord>) -> Vec<MultiRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.channels.retain(|c| c.modality == Modality::Pcg);
            r
        })
        .collect()
}

fn setup() -> (Classifier, TrainingSchedule, TrainData, TrainConfig) {
    let fx = FixtureConfig {
        duration_s: 8.0,
        ..FixtureConfig::default()
    };
    let records = pcg_only(fixture_dataset(8, &fx, 21).unwrap());
    let (train, val) = records.split_at(6);
    let mut cfg = TrainConfig {
        optimizer: OptimizerConfig {
            kind: OptimizerKind::Rmsprop,
            learning_rate: 3e-4,
            momentum: 0.0,
            batch_size: 4,
            ..OptimizerConfig::default()
        },
        online_augment: false,
        seed: 5,
        ..TrainConfig::default()
    };
    cfg.segment.window_s = 2.0;
    let schedule = TrainingSchedule::from_toml_str("[[stage]]\nepochs = 4\nsources = [{ source = \"original\" }]\n").unwrap();
    let data = TrainData {
        pools: BTreeMap::from([(DataSource::Original, train.to_vec())]),
        val: prepare_fragments(val, cfg.target_fs, &cfg.segment, None).unwrap(),
    };
    let model = Classifier::new(
        ModelConfig {
            head: HeadConfig {
                hidden_layers: 1,
                hidden_size: 32,
                n_classes: 2,
            },
            ..ModelConfig::toy(1)
        },
        2,
    )
    .unwrap();
    (model, schedule, data, cfg)
}

#[test]
fn training_loss_falls_and_reruns_match() {
    let (model, schedule, data, cfg) = setup();
    let mut a = model.clone();
    let out = run_schedule(&mut a, &schedule, &data, None, &cfg).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 4);
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[3] < losses[0], "{losses:?}");
    let best = out.best_epoch.unwrap();
    let mccs: Vec<f64> = out.log.iter().map(|e| e.val_metrics.as_ref().unwrap().fragment.mcc).collect();
    assert!(mccs.iter().all(|m| *m <= mccs[best]));

    let mut b = model.clone();
    let again = run_schedule(&mut b, &schedule, &data, None, &cfg).unwrap();
    assert_eq!(again.log, out.log);
    assert_eq!(again.best_epoch, out.best_epoch);
}

#[test]
fn missing_source_is_a_config_error() {
    let (mut model, _, data, cfg) = setup();
    let schedule =
        TrainingSchedule::from_toml_str("[[stage]]\nepochs = 1\nsources = [{ source = \"diffwave\" }]\n").unwrap();
    let err = run_schedule(&mut model, &schedule, &data, None, &cfg).unwrap_err();
    assert!(err.to_string().contains("diffwave"), "{err}");
}
