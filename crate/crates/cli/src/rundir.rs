//! Run directory layout, record files and the per-command artifact list.

use std::path::{Path, PathBuf};

use cardioforge::error::{Error, Result};
use cardioforge::signal_io::{
    read_manifest, read_wav, write_manifest, write_wav_with, ManifestEntry, Modality, MultiRecord, Provenance,
    WavFormat,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.jsonl";
pub const ARTIFACTS: &str = "artifacts.json";

/// Files one command wrote, relative to the run directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage(&self, cmd: &str) -> PathBuf {
        self.root.join(cmd)
    }

    /// An upstream file that must already exist.
    pub fn require(&self, rel: impl AsRef<Path>, producer: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Config(format!(
                "missing upstream artifact {}; run `cardioforge {producer}` first",
                p.display()
            )))
        }
    }

    /// Empty and recreate the output directory of `cmd`, so reruns never
    /// keep stale files.
    pub fn fresh_stage(&self, cmd: &str) -> Result<PathBuf> {
        let d = self.stage(cmd);
        if d.exists() {
            std::fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    /// Hash every file under the stage directory and write the list.
    pub fn seal(&self, cmd: &str) -> Result<Vec<Artifact>> {
        let dir = self.stage(cmd);
        let mut files = Vec::new();
        walk(&dir, &mut files)?;
        files.sort();
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            if f.file_name().is_some_and(|n| n == ARTIFACTS) {
                continue;
            }
            let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
            let rel = f.strip_prefix(&self.root).expect("under root");
            out.push(Artifact {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        write_json(dir.join(ARTIFACTS), &out)?;
        Ok(out)
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Float WAVs, one per channel, plus a manifest in `dir`.
pub fn save_records(dir: &Path, records: &[(MultiRecord, Option<Provenance>)], dataset: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, (r, prov)) in records.iter().enumerate() {
        let mut paths = Vec::with_capacity(r.channels.len());
        for (k, ch) in r.channels.iter().enumerate() {
            let tag = ch.channel_site.clone().unwrap_or_else(|| match ch.modality {
                Modality::Pcg => "pcg".into(),
                Modality::Ecg => "ecg".into(),
            });
            // augmented copies share their subject id
            let name = format!("{i:04}_{}_{k}_{tag}.wav", r.subject_id);
            write_wav_with(ch, dir.join(&name), WavFormat::Float32)?;
            paths.push(name);
        }
        entries.push(ManifestEntry {
            paths,
            subject_id: r.subject_id.clone(),
            label: r.label,
            dataset: dataset.to_string(),
            modalities: r.modalities(),
            sites: r.channels.iter().map(|c| c.channel_site.clone()).collect(),
            source: r.source.clone(),
            provenance: prov.clone(),
        });
    }
    write_manifest(dir.join(MANIFEST), &entries)
}

/// Records listed in a manifest; WAV paths are relative to its directory.
pub fn load_records(manifest: &Path) -> Result<Vec<MultiRecord>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for e in read_manifest(manifest)? {
        if e.paths.len() != e.modalities.len() {
            return Err(Error::Format(format!("subject {}: paths and modalities differ in length", e.subject_id)));
        }
        let mut channels = Vec::with_capacity(e.paths.len());
        for (k, (p, m)) in e.paths.iter().zip(&e.modalities).enumerate() {
            let mut rec = read_wav(base.join(p), *m)?;
            rec.channel_site = e.sites.get(k).cloned().flatten();
            channels.push(rec);
        }
        let mut r = MultiRecord::new(e.subject_id, e.label, channels);
        r.source = e.source;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
