use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, Modality, Source};
use crate::error::{Error, Result};

/// Where a derived record came from. Fields are filled by whichever stage
/// produced the entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub applied_ops: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond_subject: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_pair: Vec<(String, String)>,
}

/// One line of a JSON-lines manifest: a subject recording with one file per
/// channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub paths: Vec<String>,
    pub subject_id: String,
    pub label: Label,
    pub dataset: String,
    pub modalities: Vec<Modality>,
    #[serde(default)]
    pub sites: Vec<Option<String>>,
    #[serde(default = "default_source")]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn default_source() -> Source {
    Source::Original
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let entries = vec![
            ManifestEntry {
                paths: vec!["a_pcg.wav".into(), "a_ecg.wav".into()],
                subject_id: "a".into(),
                label: Label::Abnormal,
                dataset: "fixture".into(),
                modalities: vec![Modality::Pcg, Modality::Ecg],
                sites: vec![None, None],
                source: Source::Original,
                provenance: None,
            },
            ManifestEntry {
                paths: vec!["b.wav".into()],
                subject_id: "b".into(),
                label: Label::Normal,
                dataset: "fixture".into(),
                modalities: vec![Modality::Pcg],
                sites: vec![Some("mitral".into())],
                source: Source::Synthetic("diffwave_style".into()),
                provenance: Some(Provenance {
                    seed: Some(4),
                    ..Default::default()
                }),
            },
        ];
        write_manifest(&p, &entries).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"subject_id\":\"a\""));
        assert_eq!(read_manifest(&p).unwrap(), entries);
    }
}
