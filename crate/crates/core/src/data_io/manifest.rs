//! CSV manifest: `id,label,tmpl,srch,diff,split`.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 6] = ["id", "label", "tmpl", "srch", "diff", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split tag `{other}`"))),
        }
    }
}

/// One manifest row. Stamp paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub label: Label,
    pub tmpl: PathBuf,
    pub srch: PathBuf,
    pub diff: Option<PathBuf>,
    pub split: Option<Split>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    id: String,
    label: String,
    tmpl: String,
    srch: String,
    diff: String,
    split: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative stamp paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() { path.to_path_buf() } else { self.base_dir.join(path) }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows carrying the given split tag.
    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == Some(split))
    }
}

/// Strictly parses manifest CSV; relative paths are kept as written.
pub fn parse_manifest(reader: impl Read) -> Result<Vec<ManifestRow>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::Manifest(format!(
            "header must be `{}`, found `{}`",
            COLUMNS.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, raw) in csv.deserialize::<RawRow>().enumerate() {
        let line = i + 2;
        let raw = raw?;
        let err = |msg: String| Error::Manifest(format!("line {line}: {msg}"));
        if raw.id.is_empty() {
            return Err(err("empty id".into()));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(err(format!("duplicate id `{}`", raw.id)));
        }
        let label = match raw.label.as_str() {
            "0" => Label::Real,
            "1" => Label::Bogus,
            other => return Err(err(format!("label `{other}` is not 0 or 1"))),
        };
        if raw.tmpl.is_empty() || raw.srch.is_empty() {
            return Err(err("tmpl and srch paths are required".into()));
        }
        let split = match raw.split.as_str() {
            "" => None,
            s => Some(s.parse().map_err(|e: Error| err(e.to_string()))?),
        };
        rows.push(ManifestRow {
            id: raw.id,
            label,
            tmpl: raw.tmpl.into(),
            srch: raw.srch.into(),
            diff: (!raw.diff.is_empty()).then(|| raw.diff.into()),
            split,
        });
    }
    Ok(rows)
}

/// Loads a manifest file and checks that every referenced stamp exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Manifest(format!("cannot open {}: {e}", path.display())))?;
    let rows = parse_manifest(file)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest { rows, base_dir };
    for row in &manifest.rows {
        for p in [Some(&row.tmpl), Some(&row.srch), row.diff.as_ref()].into_iter().flatten() {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(Error::Manifest(format!("row `{}`: missing stamp {}", row.id, full.display())));
            }
        }
    }
    Ok(manifest)
}

fn path_text(p: &Path) -> Result<String> {
    p.to_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Manifest(format!("path {} is not valid UTF-8", p.display())))
}

pub fn write_manifest(rows: &[ManifestRow], writer: impl Write) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    csv.write_record(COLUMNS)?;
    for row in rows {
        csv.serialize(RawRow {
            id: row.id.clone(),
            label: row.label.to_string(),
            tmpl: path_text(&row.tmpl)?,
            srch: path_text(&row.srch)?,
            diff: row.diff.as_deref().map(path_text).transpose()?.unwrap_or_default(),
            split: row.split.map(|s| s.as_str().to_string()).unwrap_or_default(),
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_manifest(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,label,tmpl,srch,diff,split\n";

    #[test]
    fn empty_data_section() {
        assert!(parse_manifest(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn strictness() {
        let dup = format!("{HEADER}a,0,t,s,,\na,1,t,s,,\n");
        assert!(parse_manifest(dup.as_bytes()).unwrap_err().to_string().contains("duplicate"));
        let bad_label = format!("{HEADER}a,2,t,s,,\n");
        assert!(parse_manifest(bad_label.as_bytes()).is_err());
        let bad_split = format!("{HEADER}a,0,t,s,,holdout\n");
        assert!(parse_manifest(bad_split.as_bytes()).is_err());
        assert!(parse_manifest("id,label,tmpl,srch\n".as_bytes()).is_err());
        let short = format!("{HEADER}a,0,t\n");
        assert!(parse_manifest(short.as_bytes()).is_err());
    }

    #[test]
    fn round_trip() {
        let rows = vec![
            ManifestRow { id: "x1".into(), label: Label::Real, tmpl: "a/t.fits".into(), srch: "a/s.fits".into(), diff: Some("a/d.fits".into()), split: Some(Split::Train) },
            ManifestRow { id: "x,2".into(), label: Label::Bogus, tmpl: "t2.fits".into(), srch: "s2.fits".into(), diff: None, split: None },
            ManifestRow { id: "x3".into(), label: Label::Real, tmpl: "/abs/t3.fits".into(), srch: "s3.fits".into(), diff: None, split: Some(Split::Test) },
        ];
        let mut buf = Vec::new();
        write_manifest(&rows, &mut buf).unwrap();
        assert_eq!(parse_manifest(buf.as_slice()).unwrap(), rows);
    }
}
