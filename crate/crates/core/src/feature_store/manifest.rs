//! Line-oriented dataset manifest.
//!
//! ```text
//! #cflow-manifest v1 <H> <W> <masks_available: true|false>
//! #name <dataset name>                      (optional)
//! <image_id>\t<train|test>\t<good|anomalous>\t<mask path or ->
//! ```
//!
//! Other lines starting with `#` and blank lines are ignored. Feature files
//! live at `features/<image_id>.cfpd` next to the manifest; mask paths are
//! relative to the manifest directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Good,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub split: Split,
    pub label: Label,
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub image_size: (usize, usize),
    pub masks_available: bool,
    pub entries: Vec<ManifestEntry>,
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\', '\t']) || id == "." || id == ".." {
        return Err(Error::Validation(format!("invalid image id {id:?}")));
    }
    Ok(())
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Validation("image size must be positive".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            validate_id(&e.image_id)?;
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image id {}",
                    e.image_id
                )));
            }
            if e.split == Split::Train && e.label != Label::Good {
                return Err(Error::Validation(format!(
                    "train entry {} is labeled anomalous; training data must be anomaly-free",
                    e.image_id
                )));
            }
            if self.masks_available
                && e.split == Split::Test
                && e.label == Label::Anomalous
                && e.mask_path.is_none()
            {
                return Err(Error::Validation(format!(
                    "anomalous test entry {} has no mask but masks_available=true",
                    e.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn train(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "#cflow-manifest v1 {} {} {}\n",
            self.image_size.0, self.image_size.1, self.masks_available
        );
        if !self.name.is_empty() {
            let _ = writeln!(s, "#name {}", self.name);
        }
        for e in &self.entries {
            let split = match e.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let label = match e.label {
                Label::Good => "good",
                Label::Anomalous => "anomalous",
            };
            let mask = e.mask_path.as_deref().unwrap_or("-");
            let _ = writeln!(s, "{}\t{split}\t{label}\t{mask}", e.image_id);
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Format {
            path: source.to_string(),
            offset: line as u64,
            msg: format!("line {line}: {msg}"),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "empty manifest".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "#cflow-manifest" {
            return Err(bad(1, format!("bad header {header:?}")));
        }
        if fields[1] != "v1" {
            return Err(bad(
                1,
                format!("unsupported manifest version {}", fields[1]),
            ));
        }
        let dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(1, format!("bad image size {s:?}")))
        };
        let image_size = (dim(fields[2])?, dim(fields[3])?);
        let masks_available = match fields[4] {
            "true" => true,
            "false" => false,
            other => {
                return Err(bad(
                    1,
                    format!("masks_available must be true|false, got {other:?}"),
                ))
            }
        };

        let mut name = String::new();
        let mut entries = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(n) = rest.strip_prefix("name ") {
                    name = n.trim().to_string();
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(
                    lineno,
                    format!("expected 4 tab-separated fields, got {}", cols.len()),
                ));
            }
            let split = match cols[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(lineno, format!("unknown split {other:?}"))),
            };
            let label = match cols[2] {
                "good" => Label::Good,
                "anomalous" => Label::Anomalous,
                other => return Err(bad(lineno, format!("unknown label {other:?}"))),
            };
            let mask_path = match cols[3] {
                "-" => None,
                "" => return Err(bad(lineno, "empty mask field (use '-')".into())),
                p => Some(p.to_string()),
            };
            entries.push(ManifestEntry {
                image_id: cols[0].to_string(),
                split,
                label,
                mask_path,
            });
        }
        let m = DatasetManifest {
            name,
            image_size,
            masks_available,
            entries,
        };
        m.validate()?;
        Ok(m)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = DatasetManifest::parse(&text, &path.display().to_string())?;
    if m.name.is_empty() {
        m.name = path
            .parent()
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(m)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let path = path.as_ref();
    fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = load_manifest(root.join(MANIFEST_FILE))?;
        Ok(Dataset { root, manifest })
    }

    pub fn feature_path(&self, image_id: &str) -> PathBuf {
        self.root
            .join(FEATURES_DIR)
            .join(format!("{image_id}.cfpd"))
    }

    pub fn mask_path(&self, entry: &ManifestEntry) -> Option<PathBuf> {
        entry.mask_path.as_ref().map(|p| self.root.join(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "#cflow-manifest v1 64 64 true\n#name toy\n\
a\ttrain\tgood\t-\nb\ttrain\tgood\t-\nc\ttest\tgood\t-\nd\ttest\tanomalous\tmasks/d.pgm\n";

    #[test]
    fn parses_four_entries() {
        let m = DatasetManifest::parse(GOOD, "t").unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.name, "toy");
        assert_eq!(m.image_size, (64, 64));
        assert_eq!(m.train().count(), 2);
        assert_eq!(m.entries[3].mask_path.as_deref(), Some("masks/d.pgm"));
    }

    #[test]
    fn text_roundtrip() {
        let m = DatasetManifest::parse(GOOD, "t").unwrap();
        assert_eq!(m.to_text(), GOOD);
    }

    #[test]
    fn anomalous_train_rejected() {
        let text = GOOD.replace("b\ttrain\tgood", "b\ttrain\tanomalous");
        let err = DatasetManifest::parse(&text, "t").unwrap_err();
        assert!(err.to_string().contains("train entry b"), "{err}");
    }

    #[test]
    fn missing_mask_rejected_when_masks_declared() {
        let text = GOOD.replace("masks/d.pgm", "-");
        assert!(DatasetManifest::parse(&text, "t").is_err());
        let relaxed = text.replace("64 64 true", "64 64 false");
        assert!(DatasetManifest::parse(&relaxed, "t").is_ok());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(DatasetManifest::parse("", "t").is_err());
        assert!(DatasetManifest::parse("#cflow-manifest v2 1 1 true\n", "t").is_err());
        assert!(DatasetManifest::parse(&format!("{GOOD}e\tval\tgood\t-\n"), "t").is_err());
        assert!(DatasetManifest::parse(&format!("{GOOD}a\ttest\tgood\t-\n"), "t").is_err());
        assert!(DatasetManifest::parse(&format!("{GOOD}../x\ttest\tgood\t-\n"), "t").is_err());
    }
}
