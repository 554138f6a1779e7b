use std::io::Cursor;

use gist_core::captions::{apply_verdicts, build_flyp_captions, load_verdicts, review_captions, Verdict};

#[test]
fn review_resumes_after_interruption() {
    let dir = tempfile::tempdir().unwrap();
    let sidecar = dir.path().join("review.jsonl");
    let store = build_flyp_captions("d", &["alpha".into(), "beta".into(), "gamma".into(), "delta".into()]).unwrap();

    let s = review_captions(&store, &sidecar, Cursor::new("d\nq\n"), Vec::new()).unwrap();
    assert_eq!((s.kept, s.discarded, s.remaining), (0, 1, 3));

    // a crash mid-write leaves a torn final line
    let mut bytes = std::fs::read(&sidecar).unwrap();
    bytes.extend_from_slice(b"{\"caption_id\": \"x");
    std::fs::write(&sidecar, &bytes).unwrap();
    assert_eq!(load_verdicts(&sidecar).unwrap().len(), 1);

    let s = review_captions(&store, &sidecar, Cursor::new("k\n\nd\n"), Vec::new()).unwrap();
    assert_eq!((s.kept, s.discarded, s.remaining), (2, 2, 0));

    let verdicts = load_verdicts(&sidecar).unwrap();
    assert_eq!(verdicts.values().filter(|v| **v == Verdict::Discard).count(), 2);
    assert_eq!(apply_verdicts(&store, &verdicts).records().len(), 2);
}
