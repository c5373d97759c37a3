//! Dataset manifests: UTF-8 TSV, one record per line, no header:
//! `id<TAB>speech_path<TAB>image_path<TAB>split`. Relative paths resolve
//! against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub speech_path: PathBuf,
    pub image_path: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.id.is_empty() || r.id.contains(['\t', '\n']) {
                return Err(Error::Data(format!("invalid record id {:?}", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(DatasetManifest {
            base_dir: base_dir.into(),
            records,
        })
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, speech, image, split] = fields[..] else {
                return Err(Error::Data(format!(
                    "manifest line {}: expected 4 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            records.push(ManifestRecord {
                id: id.to_string(),
                speech_path: PathBuf::from(speech),
                image_path: PathBuf::from(image),
                split: split.parse()?,
            });
        }
        DatasetManifest::new(base_dir, records)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = DatasetManifest::parse(&text, base)?;
        for r in &m.records {
            for p in [m.resolve(&r.speech_path), m.resolve(&r.image_path)] {
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                r.speech_path.display(),
                r.image_path.display(),
                r.split
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "a\ts/a.fmat\ti/a.fmat\ttrain\nb\ts/b.fmat\ti/b.fmat\tdev\n";
        let m = DatasetManifest::parse(text, "/data").unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.split(Split::Dev)[0].id, "b");
        assert_eq!(m.resolve(Path::new("s/a.fmat")), PathBuf::from("/data/s/a.fmat"));
        assert_eq!(m.to_tsv(), text);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(DatasetManifest::parse("a\tx\ty\n", ".").is_err());
        assert!(DatasetManifest::parse("a\tx\ty\tholdout\n", ".").is_err());
        assert!(DatasetManifest::parse("a\tx\ty\ttrain\na\tx\ty\tdev\n", ".").is_err());
    }

    #[test]
    fn load_requires_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "a\tmissing.fmat\tmissing.fmat\ttrain\n").unwrap();
        let err = DatasetManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("missing.fmat"));
    }
}
