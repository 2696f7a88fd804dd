//! Mono RIFF/WAVE reading and writing.
//!
//! Integer PCM16 samples map to floats by `s / 32768`, so full-scale positive
//! reads as `32767/32768`. Writing quantizes with `round(x * 32768)` clamped to
//! the i16 range, which bounds the round-trip error by 2⁻¹⁵.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Modality, Recording};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        // hound reports short reads as UnexpectedEof or as a custom Other error
        hound::Error::IoError(io)
            if matches!(io.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            Error::Format(format!("{}: truncated data", path.display()))
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::Unsupported(format!("{}: wav variant", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Read a mono PCM16 or float32 WAV file.
pub fn read_wav(path: impl AsRef<Path>, modality: Modality) -> Result<Recording> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let declared = reader.len() as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    if samples.len() != declared {
        return Err(Error::Format(format!(
            "{}: truncated data ({} of {declared} samples)",
            path.display(),
            samples.len()
        )));
    }
    let rec = Recording::new(samples, spec.sample_rate, modality);
    if rec.fs == 0 {
        return Err(Error::Format(format!("{}: zero sample rate", path.display())));
    }
    Ok(rec)
}

pub fn write_wav(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    write_wav_with(rec, path, WavFormat::Pcm16)
}

pub fn write_wav_with(rec: &Recording, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = rec.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!(
            "cannot write non-finite sample at index {i}"
        )));
    }
    let spec = match format {
        WavFormat::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: rec.fs,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavFormat::Float32 => WavSpec {
            channels: 1,
            sample_rate: rec.fs,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &rec.samples {
        match format {
            WavFormat::Pcm16 => {
                let q = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                w.write_sample(q).map_err(|e| map_hound(path, e))?;
            }
            WavFormat::Float32 => w.write_sample(s as f32).map_err(|e| map_hound(path, e))?,
        }
    }
    w.finalize().map_err(|e| map_hound(path, e))
}
