use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::DegradationSpec;
use crate::error::{io_err, Error, Result};
use crate::facegeom::FaceAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Toy,
    External,
}

/// One degraded copy: which spec, which seed, where it lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub spec_id: String,
    pub seed: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub scene_path: String,
    pub annotation: FaceAnnotation,
    pub split: Split,
    pub degradations: Vec<Variant>,
    pub source: Source,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPECS_FILE: &str = "specs.json";

impl Manifest {
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate manifest id {:?}", r.id)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Manifest> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", i + 1),
            })?;
            records.push(r);
        }
        let m = Manifest { records };
        m.check_unique()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.check_unique()?;
        std::fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }

    /// Read and check that every referenced file exists under `root`.
    pub fn read(path: &Path, root: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let m = Manifest::from_jsonl(&text, path)?;
        for r in &m.records {
            let paths = std::iter::once(&r.scene_path).chain(r.degradations.iter().map(|v| &v.path));
            for p in paths {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::Data(format!("{}: listed in manifest but missing", full.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn split(&self, s: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == s).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// A dataset directory: manifest plus the spec table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub specs: BTreeMap<String, DegradationSpec>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest = Manifest::read(&root.join(MANIFEST_FILE), root)?;
        let specs = read_specs(&root.join(SPECS_FILE))?;
        for r in &manifest.records {
            for v in &r.degradations {
                if !specs.contains_key(&v.spec_id) {
                    return Err(Error::Data(format!("{}: unknown spec id {:?}", r.id, v.spec_id)));
                }
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            specs,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

pub fn write_specs(path: &Path, specs: &BTreeMap<String, DegradationSpec>) -> Result<()> {
    let text = serde_json::to_string_pretty(specs).expect("specs serialize");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_specs(path: &Path) -> Result<BTreeMap<String, DegradationSpec>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
