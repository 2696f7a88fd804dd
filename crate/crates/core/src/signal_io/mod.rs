//! Recordings, WAV I/O, JSON-lines manifests and subject-level splitting.

mod manifest;
mod split;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{read_manifest, write_manifest, ManifestEntry, Provenance};
pub use split::{
    apportion, fold_roles, stratified_kfold, stratified_split, FoldRoles, Partition, SplitRatios,
};
pub use wav::{read_wav, write_wav, write_wav_with, WavFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Pcg,
    Ecg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Abnormal];

    /// Class index used by the classifier; abnormal is the positive class.
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Normal
        } else {
            Label::Abnormal
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Abnormal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "generator")]
pub enum Source {
    Original,
    Augmented,
    Synthetic(String),
}

/// One sampled channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub fs: u32,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_site: Option<String>,
}

impl Recording {
    pub fn new(samples: Vec<f64>, fs: u32, modality: Modality) -> Self {
        Self {
            samples,
            fs,
            modality,
            channel_site: None,
        }
    }

    pub fn with_site(mut self, site: impl Into<String>) -> Self {
        self.channel_site = Some(site.into());
        self
    }

    /// Same metadata, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            fs: self.fs,
            modality: self.modality,
            channel_site: self.channel_site.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.fs == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::Validation("recording has no samples".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }
}

/// A subject-level record: one or more synchronized channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRecord {
    pub subject_id: String,
    pub label: Label,
    pub channels: Vec<Recording>,
    pub source: Source,
}

impl MultiRecord {
    pub fn new(subject_id: impl Into<String>, label: Label, channels: Vec<Recording>) -> Self {
        Self {
            subject_id: subject_id.into(),
            label,
            channels,
            source: Source::Original,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Validation(format!(
                "subject {} has no channels",
                self.subject_id
            )));
        }
        for c in &self.channels {
            c.validate()?;
        }
        Ok(())
    }

    /// Whether every channel spans the same duration within one sample.
    pub fn is_aligned(&self) -> bool {
        let d0 = self.channels[0].duration_s();
        self.channels.iter().all(|c| {
            let tol = 1.0 / c.fs as f64 + 1e-12;
            (c.duration_s() - d0).abs() <= tol.max(1.0 / self.channels[0].fs as f64 + 1e-12)
        })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.channels.iter().map(|c| c.modality).collect()
    }
}

/// A fixed-length window cut from a [`MultiRecord`], all channels included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub subject_id: String,
    pub label: Label,
    pub source: Source,
    /// Start offset in samples within the parent record.
    pub offset: usize,
    pub fs: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Fragment {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
