use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simgel::{NutClass, TactileImage};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(NutClass),
    PositionForce { position_mm: f64, force_n: f64 },
}

impl Label {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Label::Class(_) => DatasetKind::Classification,
            Label::PositionForce { .. } => DatasetKind::Regression,
        }
    }

    pub fn class(&self) -> Option<NutClass> {
        match *self {
            Label::Class(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    /// Image path relative to the manifest directory.
    pub path: PathBuf,
    pub kind: DatasetKind,
    pub label: Label,
    pub split: Split,
    /// Seed of the per-frame sensor noise.
    pub seed: u64,
    /// Indenter key, e.g. `cylinder` or `walnut`.
    pub indenter: String,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: DatasetKind,
    config_hash: String,
    seed: u64,
    note: String,
}

/// Index of a generated dataset: one JSON header line, then one line per record.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub kind: DatasetKind,
    /// SHA-256 of the generation config and simulator parameters.
    pub config_hash: String,
    pub seed: u64,
    /// Free text, records the scale relative to a full-size collection.
    pub note: String,
    pub records: Vec<Record>,
    /// Directory that record paths are relative to; not serialized.
    pub root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn image_path(&self, rec: &Record) -> PathBuf {
        self.root.join(&rec.path)
    }

    pub fn read_image<T: Scalar>(&self, rec: &Record) -> Result<TactileImage<T>> {
        TactileImage::read_png(&self.image_path(rec))
    }

    pub fn split_records(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Copy keeping only records of one split.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest { records: self.records.iter().filter(|r| r.split == split).cloned().collect(), ..self.clone() }
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            version: self.version,
            kind: self.kind,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            note: self.note.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses a manifest without touching the images.
    pub fn parse(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first =
            lines.next().ok_or_else(|| Error::format(path, "empty manifest"))?.map_err(|e| Error::io(path, e))?;
        let raw: serde_json::Value =
            serde_json::from_str(&first).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let version = raw.get("version").cloned().unwrap_or_default();
        if version.as_u64() != Some(MANIFEST_VERSION as u64) {
            return Err(Error::UnsupportedVersion {
                found: version.to_string().trim_matches('"').to_string(),
                expected: MANIFEST_VERSION.to_string(),
            });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::format(path, format!("record {}: {e}", n + 1)))?;
            if rec.kind != header.kind || rec.label.kind() != header.kind {
                return Err(Error::format(path, format!("record {} has the wrong label kind", rec.id)));
            }
            records.push(rec);
        }
        Ok(DatasetManifest {
            version: header.version,
            kind: header.kind,
            config_hash: header.config_hash,
            seed: header.seed,
            note: header.note,
            records,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    /// Parses a manifest and checks that every referenced image decodes.
    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::parse(path)?;
        for rec in &m.records {
            let img_path = m.image_path(rec);
            if !img_path.is_file() {
                return Err(Error::io(
                    &img_path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "image referenced by manifest is missing"),
                ));
            }
            m.read_image::<f32>(rec)?;
        }
        Ok(m)
    }
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.save(path)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path)
}
