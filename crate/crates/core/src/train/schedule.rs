use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentCounts;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataSource {
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "diffwave")]
    DiffWave,
    #[serde(rename = "wavegrad")]
    WaveGrad,
    /// Multichannel subjects generated from the first single-channel set.
    #[serde(rename = "training_a_synth")]
    TrainingASynth,
    #[serde(rename = "training_b_synth")]
    TrainingBSynth,
}

impl DataSource {
    pub const ALL: [DataSource; 5] = [
        DataSource::Original,
        DataSource::DiffWave,
        DataSource::WaveGrad,
        DataSource::TrainingASynth,
        DataSource::TrainingBSynth,
    ];

    pub fn is_synthetic(self) -> bool {
        self != DataSource::Original
    }

    pub fn name(self) -> &'static str {
        match self {
            DataSource::Original => "original",
            DataSource::DiffWave => "diffwave",
            DataSource::WaveGrad => "wavegrad",
            DataSource::TrainingASynth => "training_a_synth",
            DataSource::TrainingBSynth => "training_b_synth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSource {
    pub source: DataSource,
    #[serde(default)]
    pub normal_augments: usize,
    #[serde(default)]
    pub abnormal_augments: usize,
}

impl StageSource {
    pub fn counts(&self) -> AugmentCounts {
        AugmentCounts {
            normal: self.normal_augments,
            abnormal: self.abnormal_augments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStage {
    pub epochs: usize,
    pub sources: Vec<StageSource>,
}

/// Ordered training stages, each with its own data mix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    #[serde(default)]
    pub name: String,
    #[serde(default, rename = "stage")]
    pub stages: Vec<ScheduleStage>,
}

const SINGLE_CHANNEL: &str = include_str!("../../presets/schedules/single_channel.toml");
const MULTICHANNEL: &str = include_str!("../../presets/schedules/multichannel.toml");

impl TrainingSchedule {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(format!("schedule: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Shipped schedules: `single_channel` and `multichannel`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "single_channel" => Self::from_toml_str(SINGLE_CHANNEL),
            "multichannel" => Self::from_toml_str(MULTICHANNEL),
            other => Err(Error::Config(format!("unknown schedule preset {other:?}"))),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            if s.epochs == 0 {
                return Err(Error::Config(format!("stage {i} has zero epochs")));
            }
            if s.sources.is_empty() {
                return Err(Error::Config(format!("stage {i} has no data sources")));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    /// Sources referenced anywhere in the schedule, sorted.
    pub fn sources(&self) -> Vec<DataSource> {
        let mut v: Vec<DataSource> = self.stages.iter().flat_map(|s| s.sources.iter().map(|x| x.source)).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Multiply every augment count by `factor`, rounding up.
    pub fn scale_counts(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::Argument(format!("count factor {factor} must be non-negative")));
        }
        let scale = |c: usize| (c as f64 * factor).ceil() as usize;
        let mut out = self.clone();
        for s in &mut out.stages {
            for src in &mut s.sources {
                src.normal_augments = scale(src.normal_augments);
                src.abnormal_augments = scale(src.abnormal_augments);
            }
        }
        Ok(out)
    }

    /// Replace the per-stage epoch counts.
    pub fn with_epochs(&self, epochs: &[usize]) -> Result<Self> {
        if epochs.len() != self.stages.len() {
            return Err(Error::Argument(format!(
                "{} epoch counts for {} stages",
                epochs.len(),
                self.stages.len()
            )));
        }
        let mut out = self.clone();
        for (s, &e) in out.stages.iter_mut().zip(epochs) {
            s.epochs = e;
        }
        out.validate()?;
        Ok(out)
    }

    /// Same stage lengths on original data only, with no augmented copies.
    pub fn without_augmentation(&self) -> Self {
        let mut out = self.clone();
        out.name = format!("{}_no_augmentation", self.name);
        for s in &mut out.stages {
            s.sources = vec![StageSource {
                source: DataSource::Original,
                normal_augments: 0,
                abnormal_augments: 0,
            }];
        }
        out
    }
}
