//! Run configuration: one TOML document per run, every field defaulted.

use std::path::{Path, PathBuf};

use cardioforge::augment::AugmentConfig;
use cardioforge::diffusion::{CorpusConfig, DenoiserTrainConfig};
use cardioforge::error::{Error, Result};
use cardioforge::fixtures::{FixtureConfig, FixtureMode};
use cardioforge::model::{EncoderConfig, HeadConfig, LoraConfig, ModelConfig};
use cardioforge::train::{TrainConfig, TrainingSchedule};
use serde::{Deserialize, Serialize};

/// Environment variable naming a directory searched for `--config` names.
pub const CONFIG_DIR_ENV: &str = "CARDIOFORGE_CONFIG_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    SinglePcg,
    Multimodal,
    Multichannel,
}

impl DatasetMode {
    pub fn n_inputs(self) -> usize {
        match self {
            DatasetMode::SinglePcg => 1,
            DatasetMode::Multimodal => 2,
            DatasetMode::Multichannel => cardioforge::fixtures::VEST_SITES.len(),
        }
    }

    pub fn default_window_s(self) -> f64 {
        match self {
            DatasetMode::Multichannel => 2.0,
            _ => 4.0,
        }
    }

    pub fn fixture_mode(self) -> FixtureMode {
        match self {
            DatasetMode::Multichannel => FixtureMode::Multichannel,
            _ => FixtureMode::Multimodal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `toy`, `tiny` or `base`.
    pub encoder: String,
    pub head: HeadConfig,
    pub freeze_encoders: bool,
    pub lora: Option<LoraConfig>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: "toy".into(),
            head: HeadConfig::default(),
            freeze_encoders: false,
            lora: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Preset name (`single_channel`, `multichannel`) or a TOML path.
    pub name: String,
    /// Multiplier on every augment count, rounded up.
    pub count_scale: f64,
    /// Replacement epochs per stage.
    pub epochs: Option<Vec<usize>>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            name: "single_channel".into(),
            count_scale: 1.0,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Rotate `k` stratified folds instead of one split.
    pub folds: Option<usize>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            folds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSection {
    pub n_subjects: usize,
    pub config: FixtureConfig,
}

impl Default for FixtureSection {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            config: FixtureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub generator: DenoiserTrainConfig,
    pub corpus: CorpusConfig,
    /// Subjects per external conditioning set in multichannel mode.
    pub cond_subjects: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let mut generator = DenoiserTrainConfig::default();
        generator.denoiser.layers = 3;
        generator.denoiser.channels = 8;
        generator.denoiser.n_mels = 32;
        generator.steps = 200;
        Self {
            generator,
            corpus: CorpusConfig {
                max_len_s: 6.0,
                ..CorpusConfig::default()
            },
            cond_subjects: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: DatasetMode,
    pub target_fs: u32,
    /// Defaults by mode: 4 s for single-channel and multimodal, 2 s for
    /// multichannel.
    pub window_s: Option<f64>,
    pub seed: u64,
    /// Independent training runs per split.
    pub runs: usize,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub split: SplitSection,
    pub fixtures: FixtureSection,
    pub augment: AugmentConfig,
    pub synth: SynthSection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: DatasetMode::SinglePcg,
            target_fs: 1000,
            window_s: None,
            seed: 0,
            runs: 1,
            model: ModelSection::default(),
            schedule: ScheduleSection::default(),
            split: SplitSection::default(),
            fixtures: FixtureSection::default(),
            augment: AugmentConfig::default(),
            synth: SynthSection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read `spec` as a path, else as a file name under
    /// `$CARDIOFORGE_CONFIG_DIR`, else as a shipped preset name.
    pub fn load(spec: &str) -> Result<Self> {
        let direct = PathBuf::from(spec);
        let from_env = std::env::var_os(CONFIG_DIR_ENV).map(|d| Path::new(&d).join(spec));
        let path = if direct.is_file() {
            Some(direct)
        } else {
            from_env.filter(|p| p.is_file())
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
            None => Self::preset(spec),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "toy" => include_str!("../configs/toy.toml"),
            "single_pcg" => include_str!("../configs/single_pcg.toml"),
            "multimodal" => include_str!("../configs/multimodal.toml"),
            "multichannel" => include_str!("../configs/multichannel.toml"),
            other => {
                return Err(Error::Config(format!(
                    "config {other:?} is neither a file nor a preset (toy, single_pcg, multimodal, multichannel)"
                )))
            }
        };
        Self::from_toml_str(text)
    }

    /// Fill mode-dependent defaults and check every section.
    pub fn resolve(mut self) -> Result<Self> {
        let window = self.window_s.unwrap_or(self.mode.default_window_s());
        self.window_s = Some(window);
        self.train.segment.window_s = window;
        self.train.target_fs = self.target_fs;
        self.train.seed = self.seed;
        self.fixtures.config.mode = self.mode.fixture_mode();
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        self.train.validate()?;
        self.augment.validate()?;
        self.synth.generator.validate()?;
        self.fixtures.config.validate()?;
        self.model_config()?.validate()?;
        self.schedule()?;
        if self.mode == DatasetMode::Multichannel && self.train.segment.window_s <= self.train.segment.overlap_s {
            return Err(Error::Config("window must exceed the overlap".into()));
        }
        Ok(self)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            encoder: EncoderConfig::preset(&self.model.encoder)?,
            head: self.model.head,
            n_inputs: self.mode.n_inputs(),
            freeze_encoders: self.model.freeze_encoders,
            lora: self.model.lora,
        })
    }

    pub fn schedule(&self) -> Result<TrainingSchedule> {
        let s = &self.schedule;
        let base = if Path::new(&s.name).is_file() {
            TrainingSchedule::load(&s.name)?
        } else {
            TrainingSchedule::preset(&s.name)?
        };
        let scaled = base.scale_counts(s.count_scale)?;
        match &s.epochs {
            Some(e) => scaled.with_epochs(e),
            None => Ok(scaled),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}
