//! Fixed-window segmentation of subject records into fragments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Flagged, Result};
use crate::signal_io::{Fragment, MultiRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentSpec {
    pub window_s: f64,
    pub overlap_s: f64,
    pub skip_head_s: f64,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            window_s: 4.0,
            overlap_s: 0.25,
            skip_head_s: 0.3,
        }
    }
}

impl SegmentSpec {
    pub fn with_window(window_s: f64) -> Self {
        Self {
            window_s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.overlap_s >= 0.0 && self.overlap_s < self.window_s) {
            return Err(Error::Spec(format!(
                "overlap {} s must be in [0, {})",
                self.overlap_s, self.window_s
            )));
        }
        if !(self.skip_head_s >= 0.0) {
            return Err(Error::Spec("skip_head_s must be non-negative".into()));
        }
        Ok(())
    }

    /// `(skip, window, step)` in samples at `fs`.
    pub fn samples(&self, fs: u32) -> (usize, usize, usize) {
        let f = fs as f64;
        let skip = (self.skip_head_s * f).round() as usize;
        let win = (self.window_s * f).round() as usize;
        let step = ((self.window_s - self.overlap_s) * f).round() as usize;
        (skip, win, step.max(1))
    }

    /// Fragment start offsets for a signal of `len` samples.
    pub fn offsets(&self, len: usize, fs: u32) -> Vec<usize> {
        let (skip, win, step) = self.samples(fs);
        if len < skip + win {
            return Vec::new();
        }
        let count = (len - skip - win) / step + 1;
        (0..count).map(|i| skip + i * step).collect()
    }
}

/// Cut every channel of `rec` at the same offsets. All channels must share
/// one sample rate; a record too short for one window yields an empty list
/// flagged [`Flag::ShortRecord`].
pub fn segment(rec: &MultiRecord, spec: &SegmentSpec) -> Result<Flagged<Vec<Fragment>>> {
    spec.validate()?;
    rec.validate()?;
    let fs = rec.channels[0].fs;
    if rec.channels.iter().any(|c| c.fs != fs) {
        return Err(Error::Validation(format!(
            "subject {}: channels must share a sample rate before segmentation",
            rec.subject_id
        )));
    }
    let len = rec.channels.iter().map(|c| c.len()).min().unwrap_or(0);
    let offsets = spec.offsets(len, fs);
    if offsets.is_empty() {
        return Ok(Flagged::flagged(Vec::new(), Flag::ShortRecord));
    }
    let (_, win, _) = spec.samples(fs);
    let frags = offsets
        .into_iter()
        .map(|off| Fragment {
            subject_id: rec.subject_id.clone(),
            label: rec.label,
            source: rec.source.clone(),
            offset: off,
            fs,
            channels: rec
                .channels
                .iter()
                .map(|c| c.samples[off..off + win].to_vec())
                .collect(),
        })
        .collect();
    Ok(Flagged::ok(frags))
}
