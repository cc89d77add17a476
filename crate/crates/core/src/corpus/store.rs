//! Corpus layout on disk:
//!
//! ```text
//! <root>/manifest.json
//! <root>/train/annotations.csv
//! <root>/train/train_00000.egv
//! <root>/test/...
//! ```
//!
//! Only depth is stored; color and flow are derived from it on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{generate_split, GeneratorConfig, Modality, Split, VideoSample};
use crate::annotation::{parse_annotation_table, write_annotation_table, FrameAnnotation};
use crate::codec::{decode_video, encode_video, read_file, write_file};
use crate::error::{Error, Result};
use crate::model::hex_digest;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATION_FILE: &str = "annotations.csv";
pub const VIDEO_EXTENSION: &str = "egv";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    /// Relative to the corpus root.
    pub file: String,
    pub shape: Vec<usize>,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub stored_modality: Modality,
    pub modalities: Vec<Modality>,
    pub annotations: BTreeMap<String, String>,
    pub splits: BTreeMap<String, Vec<VideoEntry>>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> Result<&[VideoEntry]> {
        self.splits
            .get(split.name())
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Data(format!("manifest has no {} split", split.name())))
    }

    /// Every file the manifest references, relative to the root.
    pub fn files(&self) -> Vec<String> {
        let mut out: Vec<String> = self.annotations.values().cloned().collect();
        for entries in self.splits.values() {
            out.extend(entries.iter().map(|e| e.file.clone()));
        }
        out
    }
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("manifest: {e}")))?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::Data(format!(
            "manifest format {} is not supported (expected {MANIFEST_FORMAT})",
            m.format
        )));
    }
    for (split, entries) in &m.splits {
        if !m.annotations.contains_key(split) {
            return Err(Error::Data(format!("manifest: split '{split}' has no annotation table")));
        }
        for e in entries {
            if e.shape.len() != 4 || e.shape[0] != m.stored_modality.channels() {
                return Err(Error::Data(format!("manifest: {} has shape {:?}", e.id, e.shape)));
            }
            if Path::new(&e.file).is_absolute() || e.file.split('/').any(|p| p == "..") {
                return Err(Error::Data(format!("manifest: {} points outside the corpus", e.id)));
            }
        }
    }
    Ok(m)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Data(format!("no corpus at {} (missing {MANIFEST_FILE})", root.display())));
    }
    parse_manifest(&read_file(&path)?)
}

pub fn corpus_exists(root: &Path) -> bool {
    root.join(MANIFEST_FILE).exists()
}

fn write_split(root: &Path, split: Split, videos: &[VideoSample]) -> Result<(String, Vec<VideoEntry>)> {
    let dir = PathBuf::from(split.name());
    let mut entries = Vec::with_capacity(videos.len());
    let mut rows: Vec<FrameAnnotation> = Vec::new();
    for v in videos {
        let rel = format!("{}/{}.{VIDEO_EXTENSION}", split.name(), v.id);
        let bytes = encode_video(&v.frames)?;
        write_file(&root.join(&rel), &bytes)?;
        entries.push(VideoEntry {
            id: v.id.clone(),
            file: rel,
            shape: v.frames.shape().to_vec(),
            seed: v.seed,
            sha256: hex_digest(&bytes),
        });
        rows.extend(v.annotations.iter().cloned());
    }
    let table = dir.join(ANNOTATION_FILE);
    let mut buf = Vec::new();
    write_annotation_table(&mut buf, &rows)?;
    write_file(&root.join(&table), &buf)?;
    Ok((format!("{}/{ANNOTATION_FILE}", split.name()), entries))
}

/// Writes both splits and the manifest. Refuses to touch an existing
/// corpus unless `force` is set.
pub fn write_corpus(root: &Path, cfg: &GeneratorConfig, seed: u64, force: bool) -> Result<Manifest> {
    cfg.validate()?;
    if corpus_exists(root) {
        if !force {
            return Err(Error::Config(format!(
                "a corpus already exists at {}; pass --force to overwrite it",
                root.display()
            )));
        }
        for split in [Split::Train, Split::Test] {
            let d = root.join(split.name());
            if d.exists() {
                fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            }
        }
    }
    let mut annotations = BTreeMap::new();
    let mut splits = BTreeMap::new();
    for split in [Split::Train, Split::Test] {
        let videos = generate_split(cfg, seed, split)?;
        let (table, entries) = write_split(root, split, &videos)?;
        annotations.insert(split.name().to_string(), table);
        splits.insert(split.name().to_string(), entries);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        seed,
        generator: cfg.clone(),
        stored_modality: Modality::Depth,
        modalities: Modality::ALL.to_vec(),
        annotations,
        splits,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Data(format!("manifest: {e}")))?;
    write_file(&root.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

/// Loads the stored depth videos of one split with their annotations.
pub fn load_split(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<VideoSample>> {
    let entries = manifest.entries(split)?;
    let table_path = root.join(&manifest.annotations[split.name()]);
    let table = fs::File::open(&table_path).map_err(|e| Error::io(&table_path, e))?;
    let mut annotations = parse_annotation_table(table)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let frames = decode_video(&read_file(&root.join(&e.file))?)?;
        if frames.shape() != e.shape.as_slice() {
            return Err(Error::Data(format!(
                "{}: file holds shape {:?}, manifest says {:?}",
                e.id,
                frames.shape(),
                e.shape
            )));
        }
        let segs = annotations.remove(&e.id).unwrap_or_default();
        out.push(VideoSample::new(&e.id, manifest.stored_modality, frames, segs, e.seed)?);
    }
    if let Some(id) = annotations.keys().next() {
        return Err(Error::Annotation(format!("annotation table names unknown video '{id}'")));
    }
    Ok(out)
}
