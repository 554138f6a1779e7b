use std::ffi::{CStr, CString};
use std::ptr;

use gist_ffi::*;

fn last_error() -> String {
    let p = gist_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(gist_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn normalize_and_cosine() {
    let v = [3.0, 4.0];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { gist_l2_normalize(v.as_ptr(), 2, out.as_mut_ptr()) }, GistStatus::Ok);
    assert!((out[0] - 0.6).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);

    let mut c = 0.0;
    let w = [6.0, 8.0];
    assert_eq!(unsafe { gist_cosine_similarity(v.as_ptr(), w.as_ptr(), 2, &mut c) }, GistStatus::Ok);
    assert!((c - 1.0).abs() < 1e-6);

    let z = [0.0, 0.0];
    assert_eq!(unsafe { gist_l2_normalize(z.as_ptr(), 2, out.as_mut_ptr()) }, GistStatus::ZeroVector);
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let mut out = [0.0; 2];
    let s = unsafe { gist_l2_normalize(ptr::null(), 2, out.as_mut_ptr()) };
    assert_eq!(s, GistStatus::NullPointer);
    assert!(last_error().contains('v'));
}

#[test]
fn loss_matches_two_pair_identity() {
    let eye = [1.0, 0.0, 0.0, 1.0];
    let mut loss = 0.0;
    let mut gi = [0.0; 4];
    let mut gs = 0.0;
    let s = unsafe {
        gist_contrastive_loss(eye.as_ptr(), eye.as_ptr(), 2, 2, 1.0, &mut loss, gi.as_mut_ptr(), ptr::null_mut(), &mut gs)
    };
    assert_eq!(s, GistStatus::Ok);
    let expected = 4.0 * (1.0 + (-1.0f64).exp()).ln();
    assert!((loss - expected).abs() < 1e-9);
    assert!(gi.iter().any(|g| *g != 0.0));

    let bad = [2.0, 0.0, 0.0, 1.0];
    let s = unsafe {
        gist_contrastive_loss(bad.as_ptr(), eye.as_ptr(), 2, 2, 1.0, &mut loss, ptr::null_mut(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(s, GistStatus::InvalidArgument);
}

#[test]
fn match_breaks_ties_by_index() {
    let image = [1.0, 0.0];
    // rows 0 and 2 are identical, row 1 is the best
    let cands = [0.6, 0.8, 1.0, 0.0, 0.6, 0.8, 0.0, 1.0];
    let mut idx = [0usize; 3];
    let mut count = 0;
    let s = unsafe { gist_match_top_n(image.as_ptr(), cands.as_ptr(), 4, 2, 3, idx.as_mut_ptr(), &mut count) };
    assert_eq!(s, GistStatus::Ok);
    assert_eq!(count, 3);
    assert_eq!(idx, [1, 0, 2]);
}

#[test]
fn accuracy_and_bootstrap() {
    // three samples, two classes; first two correct
    let scores = [0.9, 0.1, 0.2, 0.8, 0.7, 0.3];
    let labels = [0u32, 1, 1];
    let mut acc = 0.0;
    assert_eq!(
        unsafe { gist_topk_accuracy(scores.as_ptr(), labels.as_ptr(), 3, 2, 1, &mut acc) },
        GistStatus::Ok
    );
    assert!((acc - 2.0 / 3.0).abs() < 1e-12);

    let (mut m1, mut s1, mut m2, mut s2) = (0.0, 0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(
            gist_bootstrap_accuracy(scores.as_ptr(), labels.as_ptr(), 3, 2, 1, 200, 7, &mut m1, &mut s1),
            GistStatus::Ok
        );
        gist_bootstrap_accuracy(scores.as_ptr(), labels.as_ptr(), 3, 2, 1, 200, 7, &mut m2, &mut s2);
    }
    assert_eq!((m1, s1), (m2, s2));
    assert!(s1 > 0.0);
}

#[test]
fn backend_handle_roundtrip() {
    let id = CString::new("synthetic-hash-16").unwrap();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { gist_backend_open(id.as_ptr(), ptr::null(), &mut b) }, GistStatus::Ok);
    let mut d = 0;
    unsafe { gist_backend_dim(b, &mut d) };
    assert_eq!(d, 16);
    let text = CString::new("a small red bird").unwrap();
    let mut e = vec![0.0; d];
    assert_eq!(unsafe { gist_backend_encode_text(b, text.as_ptr(), e.as_mut_ptr(), d) }, GistStatus::Ok);
    assert!(e.iter().all(|x| x.is_finite()) && e.iter().any(|x| *x != 0.0));
    assert_eq!(
        unsafe { gist_backend_encode_text(b, text.as_ptr(), e.as_mut_ptr(), d - 1) },
        GistStatus::DimensionMismatch
    );
    unsafe { gist_backend_free(b) };
    unsafe { gist_backend_free(ptr::null_mut()) };
}

#[test]
fn missing_files_give_io_status() {
    let stem = CString::new("/nonexistent/probe").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { gist_probe_load(stem.as_ptr(), &mut p) }, GistStatus::Io);
    assert!(p.is_null());
    let path = CString::new("/nonexistent/manifest.jsonl").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gist_manifest_load(path.as_ptr(), &mut m) }, GistStatus::Io);
}

#[test]
fn manifest_counts() {
    let dir = std::env::temp_dir().join(format!("gist-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let ds = gist_core::synth::write_toy_dataset(&dir, &gist_core::synth::ToyConfig::default()).unwrap();
    let path = CString::new(ds.manifest.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gist_manifest_load(path.as_ptr(), &mut m) }, GistStatus::Ok, "{}", last_error());
    let (mut classes, mut test) = (0, 0);
    unsafe {
        gist_manifest_class_count(m, &mut classes);
        gist_manifest_split_count(m, GistSplit::Test, &mut test);
        gist_manifest_free(m);
    }
    assert_eq!(classes, 10);
    assert_eq!(test, 80);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gist.h")).unwrap();
    for name in [
        "gist_last_error_message",
        "gist_contrastive_loss",
        "gist_match_top_n",
        "gist_bootstrap_accuracy",
        "gist_backend_open",
        "gist_probe_scores",
        "gist_zeroshot_free",
        "typedef struct GistProbe GistProbe",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
