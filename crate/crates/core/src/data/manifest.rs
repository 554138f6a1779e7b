use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    name: String,
    classes: Vec<String>,
}

/// A labeled image set with split assignments. Construct through
/// [`DatasetManifest::new`] or [`load_manifest`] so the invariants hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    name: String,
    classes: Vec<String>,
    records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, classes: Vec<String>, records: Vec<ImageRecord>) -> Result<Self> {
        let m = DatasetManifest {
            name: name.into(),
            classes,
            records,
        };
        m.validate().map_err(|(_, msg)| Error::Manifest(msg))?;
        Ok(m)
    }

    /// On failure returns the offending record index (if any) and a message.
    fn validate(&self) -> std::result::Result<(), (Option<usize>, String)> {
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.as_str()) {
                return Err((None, format!("duplicate class {c:?}")));
            }
        }
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.image_id.is_empty() {
                return Err((Some(i), "empty image_id".into()));
            }
            if !ids.insert(r.image_id.as_str()) {
                return Err((Some(i), format!("duplicate image_id {:?}", r.image_id)));
            }
            if !seen.contains(r.label.as_str()) {
                return Err((
                    Some(i),
                    format!("image {:?} has unknown label {:?}", r.image_id, r.label),
                ));
            }
            if r.path.as_os_str().is_empty() {
                return Err((Some(i), format!("image {:?} has an empty path", r.image_id)));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Rebuilds the manifest with a different record list, revalidating.
    pub fn with_records(&self, records: Vec<ImageRecord>) -> Result<Self> {
        DatasetManifest::new(self.name.clone(), self.classes.clone(), records)
    }

    /// Header line plus one line per record, LF-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            name: self.name.clone(),
            classes: self.classes.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Parses manifest text. `origin` is only used in error messages, and
    /// relative record paths are kept as written.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, htext) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let header: Header =
            serde_json::from_str(htext).map_err(|e| perr(hline, format!("header: {e}")))?;
        let mut records = Vec::new();
        let mut line_of = Vec::new();
        for (n, l) in lines {
            let r: ImageRecord = serde_json::from_str(l).map_err(|e| perr(n, format!("record: {e}")))?;
            records.push(r);
            line_of.push(n);
        }
        let m = DatasetManifest {
            name: header.name,
            classes: header.classes,
            records,
        };
        m.validate().map_err(|(idx, msg)| match idx {
            Some(i) => perr(line_of[i], msg),
            None => perr(hline, msg),
        })?;
        Ok(m)
    }

    /// Record paths resolved against `base` when relative.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        for r in &mut self.records {
            if r.path.is_relative() {
                r.path = base.join(&r.path);
            }
        }
        self
    }
}

/// Loads and validates a JSON Lines manifest. Relative image paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = DatasetManifest::parse(&text, path)?;
    Ok(m.resolve_paths(path.parent().unwrap_or(Path::new("."))))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"name":"toy","classes":["a","b"]}
{"image_id":"1","path":"img/1.png","label":"a","split":"train"}
{"image_id":"2","path":"img/2.png","label":"b","split":"test"}
"#;

    #[test]
    fn parses_and_keeps_class_order() {
        let m = DatasetManifest::parse(SMALL, Path::new("m.jsonl")).unwrap();
        assert_eq!(m.classes(), ["a", "b"]);
        assert_eq!(m.count(Split::Train), 1);
        assert_eq!(m.count(Split::Test), 1);
        assert_eq!(m.to_jsonl(), SMALL);
    }

    #[test]
    fn empty_records_are_valid() {
        let m = DatasetManifest::parse("{\"name\":\"e\",\"classes\":[\"x\"]}\n", Path::new("e")).unwrap();
        assert!(m.records().is_empty());
    }

    #[test]
    fn unknown_label_names_the_row() {
        let bad = format!("{SMALL}{}\n", r#"{"image_id":"3","path":"p","label":"zebra","split":"val"}"#);
        let err = DatasetManifest::parse(&bad, Path::new("m.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("\"3\"") && message.contains("zebra"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let bad = format!("{SMALL}{}\n", r#"{"image_id":"1","path":"p","label":"a","split":"val"}"#);
        assert!(DatasetManifest::parse(&bad, Path::new("m")).is_err());
    }

    #[test]
    fn duplicate_class_rejected() {
        assert!(DatasetManifest::new("x", vec!["a".into(), "a".into()], vec![]).is_err());
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let bad = format!("{SMALL}{{oops\n");
        assert!(matches!(
            DatasetManifest::parse(&bad, Path::new("m")),
            Err(Error::Parse { line: 4, .. })
        ));
    }
}
