use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hashing::sha256_hex;
use crate::{Error, Result};

pub const FLYP_TEMPLATE_ID: &str = "flyp";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: String,
    #[serde(default)]
    pub axis_value: Option<String>,
    pub model_id: String,
    pub request_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub label: String,
    pub long_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_text: Option<String>,
    pub provenance: Provenance,
}

/// Stable id for a class description: identical text under the same label
/// always gets the same id.
pub fn caption_id(label: &str, long_text: &str) -> String {
    let mut buf = Vec::with_capacity(label.len() + long_text.len() + 1);
    buf.extend_from_slice(label.as_bytes());
    buf.push(0);
    buf.extend_from_slice(long_text.as_bytes());
    format!("cap-{}", &sha256_hex(&buf)[..16])
}

impl CaptionRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::invalid(format!("caption {:?}: {m}", self.caption_id));
        if self.long_text.trim().is_empty() {
            return Err(bad("empty long text".into()));
        }
        if let Some(short) = &self.short_text {
            if short.trim().is_empty() {
                return Err(bad("empty short text".into()));
            }
            if short.chars().count() >= self.long_text.chars().count() {
                return Err(bad("short text is not shorter than long text".into()));
            }
        }
        Ok(())
    }

    pub fn is_flyp(&self) -> bool {
        self.provenance.template_id == FLYP_TEMPLATE_ID
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionStore {
    pub dataset_name: String,
    pub m_per_class: usize,
    records: Vec<CaptionRecord>,
}

impl CaptionStore {
    pub fn new(dataset_name: impl Into<String>, m_per_class: usize, records: Vec<CaptionRecord>) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &records {
            r.validate()?;
            if !ids.insert(r.caption_id.as_str()) {
                return Err(Error::invalid(format!("duplicate caption id {:?}", r.caption_id)));
            }
        }
        Ok(CaptionStore {
            dataset_name: dataset_name.into(),
            m_per_class,
            records,
        })
    }

    pub fn records(&self) -> &[CaptionRecord] {
        &self.records
    }

    pub fn get(&self, caption_id: &str) -> Option<&CaptionRecord> {
        self.records.iter().find(|r| r.caption_id == caption_id)
    }

    pub fn by_label(&self) -> BTreeMap<&str, Vec<&CaptionRecord>> {
        let mut m: BTreeMap<&str, Vec<&CaptionRecord>> = BTreeMap::new();
        for r in &self.records {
            m.entry(r.label.as_str()).or_default().push(r);
        }
        m
    }

    pub fn count_for(&self, label: &str) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Every label must be one of `classes`; with `require_all`, every class
    /// must also have at least one caption.
    pub fn check_classes(&self, classes: &[String], require_all: bool) -> Result<()> {
        let known: HashSet<&str> = classes.iter().map(String::as_str).collect();
        if let Some(r) = self.records.iter().find(|r| !known.contains(r.label.as_str())) {
            return Err(Error::invalid(format!(
                "caption {:?} has label {:?} outside the class list",
                r.caption_id, r.label
            )));
        }
        if require_all {
            if let Some(c) = classes.iter().find(|c| self.count_for(c) == 0) {
                return Err(Error::NoCaptions(c.clone()));
            }
        }
        Ok(())
    }

    pub fn retain(&self, keep: impl Fn(&CaptionRecord) -> bool) -> CaptionStore {
        CaptionStore {
            dataset_name: self.dataset_name.clone(),
            m_per_class: self.m_per_class,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Sets a summary on one caption, checking the record invariants.
    pub fn set_short_text(&mut self, caption_id: &str, short: String) -> Result<()> {
        let r = self
            .records
            .iter_mut()
            .find(|r| r.caption_id == caption_id)
            .ok_or_else(|| Error::invalid(format!("unknown caption {caption_id:?}")))?;
        let previous = r.short_text.replace(short);
        if let Err(e) = r.validate() {
            r.short_text = previous;
            return Err(e);
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("caption serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a JSON Lines store; `m_per_class` becomes the largest class count.
    pub fn load(path: &Path, dataset_name: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<CaptionRecord>(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let mut store = CaptionStore::new(dataset_name, 0, records)?;
        store.m_per_class = store.by_label().values().map(Vec::len).max().unwrap_or(0);
        Ok(store)
    }
}

/// Appends `", <class_name>"` unless the text already ends with the class
/// name. Trailing whitespace and periods are dropped first.
pub fn append_class_name(short_text: &str, class_name: &str) -> String {
    let base = short_text.trim_end().trim_end_matches('.').trim_end();
    if base.ends_with(class_name) {
        return base.to_string();
    }
    format!("{base}, {class_name}")
}

/// Class-name-only captions, `"a photo of a <class>"`, one per class.
pub fn build_flyp_captions(dataset_name: &str, class_names: &[String]) -> Result<CaptionStore> {
    if class_names.is_empty() {
        return Err(Error::invalid("empty class list"));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(class_names.len());
    for c in class_names {
        if !seen.insert(c.as_str()) {
            return Err(Error::invalid(format!("duplicate class name {c:?}")));
        }
        let text = format!("a photo of a {}", super::template::display_class_name(c));
        records.push(CaptionRecord {
            caption_id: caption_id(c, &text),
            label: c.clone(),
            long_text: text,
            short_text: None,
            provenance: Provenance {
                template_id: FLYP_TEMPLATE_ID.into(),
                axis_value: None,
                model_id: "none".into(),
                request_hash: String::new(),
            },
        });
    }
    CaptionStore::new(dataset_name, 1, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_examples() {
        assert_eq!(
            append_class_name("raised, red, tender lumps", "erythema nodosum"),
            "raised, red, tender lumps, erythema nodosum"
        );
        assert_eq!(append_class_name("x", "y"), "x, y");
        let once = append_class_name("sleek in appearance.", "Red-winged Blackbird");
        assert_eq!(once, "sleek in appearance, Red-winged Blackbird");
        assert_eq!(append_class_name(&once, "Red-winged Blackbird"), once);
    }

    #[test]
    fn flyp_captions() {
        let s = build_flyp_captions("air", &["747-100".to_string()]).unwrap();
        assert_eq!(s.records()[0].long_text, "a photo of a 747-100");
        assert!(s.records()[0].is_flyp());
        let classes: Vec<String> = (0..40).map(|i| format!("c{i}")).collect();
        assert_eq!(build_flyp_captions("d", &classes).unwrap().records().len(), 40);
        assert!(build_flyp_captions("d", &["a".into(), "a".into()]).is_err());
        assert!(build_flyp_captions("d", &[]).is_err());
    }

    #[test]
    fn short_text_must_be_shorter() {
        let mut s = build_flyp_captions("d", &["rose".to_string()]).unwrap();
        let id = s.records()[0].caption_id.clone();
        assert!(s.set_short_text(&id, "a much longer text than the original caption".into()).is_err());
        assert!(s.records()[0].short_text.is_none());
        s.set_short_text(&id, "rose".into()).unwrap();
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_flyp_captions("d", &["a".to_string(), "b".to_string()]).unwrap();
        let p = dir.path().join("c.jsonl");
        s.write(&p).unwrap();
        let back = CaptionStore::load(&p, "d").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn class_coverage() {
        let s = build_flyp_captions("d", &["a".to_string()]).unwrap();
        assert!(s.check_classes(&["a".into(), "b".into()], false).is_ok());
        assert!(matches!(s.check_classes(&["a".into(), "b".into()], true), Err(Error::NoCaptions(c)) if c == "b"));
        assert!(s.check_classes(&["b".into()], false).is_err());
    }
}
