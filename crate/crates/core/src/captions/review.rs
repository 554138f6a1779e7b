//! Manual vetting pass over generated captions.
//!
//! Verdicts go to a JSON Lines sidecar, one `{caption_id, verdict,
//! timestamp}` object per line, appended and flushed as they are made so an
//! interrupted session can resume. Later lines override earlier ones.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::store::CaptionStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub caption_id: String,
    pub verdict: Verdict,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReviewSummary {
    pub kept: usize,
    pub discarded: usize,
    pub remaining: usize,
}

/// Reads the sidecar. If a line is corrupt, the file is cut back to the
/// intact prefix before it and only that prefix is returned.
pub fn load_verdicts(path: &Path) -> Result<BTreeMap<String, Verdict>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut good_len = 0usize;
    let mut corrupt = false;
    for chunk in bytes.split_inclusive(|&b| b == b'\n') {
        let complete = chunk.ends_with(b"\n");
        let parsed = std::str::from_utf8(chunk)
            .ok()
            .map(str::trim)
            .and_then(|s| if s.is_empty() { None } else { Some(s) })
            .map(serde_json::from_str::<VerdictEntry>);
        match parsed {
            None if complete => good_len += chunk.len(),
            Some(Ok(entry)) if complete => {
                out.insert(entry.caption_id, entry.verdict);
                good_len += chunk.len();
            }
            _ => {
                corrupt = true;
                break;
            }
        }
    }
    if corrupt {
        log::warn!(
            "{}: corrupted verdict sidecar, keeping the first {good_len} bytes",
            path.display()
        );
        fs::write(path, &bytes[..good_len]).map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

pub fn append_verdict(path: &Path, caption_id: &str, verdict: Verdict) -> Result<()> {
    let entry = VerdictEntry {
        caption_id: caption_id.to_string(),
        verdict,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(&entry)?;
    line.push('\n');
    f.write_all(line.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// Drops every caption with a discard verdict.
pub fn apply_verdicts(store: &CaptionStore, verdicts: &BTreeMap<String, Verdict>) -> CaptionStore {
    store.retain(|r| verdicts.get(&r.caption_id) != Some(&Verdict::Discard))
}

/// Walks captions without a verdict, asking on `output` and reading answers
/// from `input`: `k` or empty keeps, `d` discards, `q` or end of input stops.
pub fn review_captions<R: BufRead, W: Write>(
    store: &CaptionStore,
    sidecar: &Path,
    mut input: R,
    mut output: W,
) -> Result<ReviewSummary> {
    let mut verdicts = load_verdicts(sidecar)?;
    let pending: Vec<_> = store
        .records()
        .iter()
        .filter(|r| !verdicts.contains_key(&r.caption_id))
        .collect();
    let total = pending.len();
    let io = |e| Error::io(sidecar, e);
    let mut done = 0;
    'outer: for (i, r) in pending.iter().enumerate() {
        loop {
            write!(
                output,
                "[{}/{total}] {} ({})\n  {}\nkeep? [k]eep / [d]iscard / [q]uit > ",
                i + 1,
                r.label,
                r.caption_id,
                r.long_text
            )
            .and_then(|_| output.flush())
            .map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                break 'outer;
            }
            let verdict = match line.trim() {
                "" | "k" | "keep" => Verdict::Keep,
                "d" | "discard" => Verdict::Discard,
                "q" | "quit" => break 'outer,
                _ => continue,
            };
            append_verdict(sidecar, &r.caption_id, verdict)?;
            verdicts.insert(r.caption_id.clone(), verdict);
            done += 1;
            break;
        }
    }
    let in_store = |v: Verdict| {
        store
            .records()
            .iter()
            .filter(|r| verdicts.get(&r.caption_id) == Some(&v))
            .count()
    };
    Ok(ReviewSummary {
        kept: in_store(Verdict::Keep),
        discarded: in_store(Verdict::Discard),
        remaining: total - done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captions::build_flyp_captions;

    fn store() -> CaptionStore {
        build_flyp_captions("d", &["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn all_keep_leaves_store_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let side = dir.path().join("v.jsonl");
        let s = store();
        let sum = review_captions(&s, &side, "k\nk\n\n".as_bytes(), Vec::new()).unwrap();
        assert_eq!(sum, ReviewSummary { kept: 3, discarded: 0, remaining: 0 });
        assert_eq!(apply_verdicts(&s, &load_verdicts(&side).unwrap()), s);
    }

    #[test]
    fn resume_after_interrupt() {
        let dir = tempfile::tempdir().unwrap();
        let side = dir.path().join("v.jsonl");
        let s = store();
        let first = review_captions(&s, &side, "d\n".as_bytes(), Vec::new()).unwrap();
        assert_eq!(first.remaining, 2);
        let mut shown = Vec::new();
        let second = review_captions(&s, &side, "x\nk\nq\n".as_bytes(), &mut shown).unwrap();
        assert_eq!(second, ReviewSummary { kept: 1, discarded: 1, remaining: 1 });
        let shown = String::from_utf8(shown).unwrap();
        assert!(!shown.contains(&s.records()[0].caption_id));
        let kept = apply_verdicts(&s, &load_verdicts(&side).unwrap());
        assert_eq!(kept.records().len(), 2);
    }

    #[test]
    fn corrupted_sidecar_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let side = dir.path().join("v.jsonl");
        append_verdict(&side, "x", Verdict::Discard).unwrap();
        append_verdict(&side, "y", Verdict::Keep).unwrap();
        let intact = fs::read(&side).unwrap();
        let mut bytes = intact.clone();
        bytes.extend_from_slice(b"{\"caption_id\":\"z\",\"verd");
        fs::write(&side, &bytes).unwrap();
        let v = load_verdicts(&side).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(fs::read(&side).unwrap(), intact);
    }
}
