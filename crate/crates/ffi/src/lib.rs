//! C ABI over `gist-core`.
//!
//! Every function returns a [`GistStatus`]. On failure the message is kept
//! in a thread-local slot readable through [`gist_last_error_message`].
//! Objects cross the boundary as opaque handles and must be released with
//! their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gist_core::classifier::{LinearProbe, Scorer, ZeroShotHead};
use gist_core::data::{load_manifest, DatasetManifest, Split};
use gist_core::embedding::{cosine_similarity, Backend, EmbeddingVector, ProjectionHeads, Source};
use gist_core::eval::{bootstrap_accuracy, topk_accuracy, BootstrapConfig};
use gist_core::linalg::Matrix;
use gist_core::matcher::match_image_to_captions;
use gist_core::trainer::contrastive_loss_with_grad;
use gist_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GistStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    ZeroVector = 6,
    Config = 7,
    Internal = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GistSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl From<GistSplit> for Split {
    fn from(s: GistSplit) -> Self {
        match s {
            GistSplit::Train => Split::Train,
            GistSplit::Val => Split::Val,
            GistSplit::Test => Split::Test,
        }
    }
}

/// Opaque dataset manifest.
pub struct GistManifest(DatasetManifest);

/// Opaque encoder backend, optionally with projection heads.
pub struct GistBackend(Backend);

/// Opaque linear probe.
pub struct GistProbe(LinearProbe);

/// Opaque zero-shot head.
pub struct GistZeroShotHead(ZeroShotHead);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> GistStatus {
    match err {
        Error::Io { .. } => GistStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Manifest(_) => GistStatus::Parse,
        Error::DimensionMismatch { .. } => GistStatus::DimensionMismatch,
        Error::ZeroVector => GistStatus::ZeroVector,
        Error::Config(_) | Error::Template { .. } => GistStatus::Config,
        Error::InvalidInput(_) | Error::UnknownImage(_) => GistStatus::InvalidArgument,
        Error::Stage { source, .. } => status_of(source),
        _ => GistStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

type FfiResult<T = ()> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> GistStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GistStatus::Ok,
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("{name} is null"));
            GistStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            GistStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside gist");
            GistStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Fail::Null(name))
}

fn rows(data: &[f64], n: usize, d: usize) -> Vec<Vec<f64>> {
    if d == 0 {
        return vec![Vec::new(); n];
    }
    data.chunks(d).take(n).map(<[f64]>::to_vec).collect()
}

fn labels_arg(labels: &[u32]) -> Vec<usize> {
    labels.iter().map(|&l| l as usize).collect()
}

fn copy_scores(scores: &[f64], out: &mut [f64]) -> FfiResult {
    if out.len() < scores.len() {
        return Err(Fail::Arg(format!("output buffer holds {}, need {}", out.len(), scores.len())));
    }
    out[..scores.len()].copy_from_slice(scores);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next gist call on the same thread.
#[no_mangle]
pub extern "C" fn gist_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gist_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the unit-norm copy of `v` into `out` (both of length `d`).
///
/// # Safety
/// `v` and `out` must point to `d` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gist_l2_normalize(v: *const f64, d: usize, out: *mut f64) -> GistStatus {
    guard(|| {
        let v = slice_arg(v, d, "v")?;
        let out = slice_mut(out, d, "out")?;
        let n = gist_core::embedding::normalized_f64(v)?;
        out.copy_from_slice(&n);
        Ok(())
    })
}

/// # Safety
/// `u` and `v` must point to `d` readable doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn gist_cosine_similarity(
    u: *const f64,
    v: *const f64,
    d: usize,
    out: *mut f64,
) -> GistStatus {
    guard(|| {
        let u = slice_arg(u, d, "u")?;
        let v = slice_arg(v, d, "v")?;
        let out = out_arg(out, "out")?;
        *out = cosine_similarity(
            &EmbeddingVector::from_f64(u, Source::Image, "ffi"),
            &EmbeddingVector::from_f64(v, Source::Text, "ffi"),
        )?;
        Ok(())
    })
}

/// Symmetric contrastive loss over `b` unit-norm image/text rows of width
/// `d` (row-major). The gradient pointers may be null; when given they
/// receive `b*d` values each (and one value for `grad_scale`).
///
/// # Safety
/// Pointers must be valid for the sizes described above.
#[no_mangle]
pub unsafe extern "C" fn gist_contrastive_loss(
    images: *const f64,
    texts: *const f64,
    b: usize,
    d: usize,
    scale: f64,
    loss: *mut f64,
    grad_images: *mut f64,
    grad_texts: *mut f64,
    grad_scale: *mut f64,
) -> GistStatus {
    guard(|| {
        let im = slice_arg(images, b * d, "images")?;
        let tx = slice_arg(texts, b * d, "texts")?;
        let loss = out_arg(loss, "loss")?;
        let im = Matrix {
            rows: b,
            cols: d,
            data: im.to_vec(),
        };
        let tx = Matrix {
            rows: b,
            cols: d,
            data: tx.to_vec(),
        };
        let o = contrastive_loss_with_grad(&im, &tx, scale, None)?;
        *loss = o.loss;
        if !grad_images.is_null() {
            slice_mut(grad_images, b * d, "grad_images")?.copy_from_slice(&o.grad_images.data);
        }
        if !grad_texts.is_null() {
            slice_mut(grad_texts, b * d, "grad_texts")?.copy_from_slice(&o.grad_texts.data);
        }
        if let Some(g) = grad_scale.as_mut() {
            *g = o.grad_scale;
        }
        Ok(())
    })
}

/// Indices of the `n` candidate rows most similar to `image`, best first.
/// Equal scores rank the lower index first. `out_indices` must hold
/// `min(n, m)` entries; the number written goes to `out_count`.
///
/// # Safety
/// `image` holds `d` doubles, `candidates` holds `m*d` doubles row-major.
#[no_mangle]
pub unsafe extern "C" fn gist_match_top_n(
    image: *const f64,
    candidates: *const f64,
    m: usize,
    d: usize,
    n: usize,
    out_indices: *mut usize,
    out_count: *mut usize,
) -> GistStatus {
    guard(|| {
        let image = slice_arg(image, d, "image")?;
        let cands = slice_arg(candidates, m * d, "candidates")?;
        let count = out_arg(out_count, "out_count")?;
        let width = m.max(1).to_string().len();
        let class_captions: Vec<(String, EmbeddingVector)> = rows(cands, m, d)
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("{i:0width$}"), EmbeddingVector::from_f64(r, Source::Text, "ffi")))
            .collect();
        let img = EmbeddingVector::from_f64(image, Source::Image, "ffi");
        let a = match_image_to_captions("image", &img, &class_captions, n)?;
        let out = slice_mut(out_indices, a.ranked.len(), "out_indices")?;
        for (o, r) in out.iter_mut().zip(&a.ranked) {
            *o = r.caption_id.parse().map_err(|_| Fail::Arg("bad caption index".into()))?;
        }
        *count = a.ranked.len();
        Ok(())
    })
}

/// Top-`k` accuracy of `n` score rows of width `c` against `labels`.
///
/// # Safety
/// `scores` holds `n*c` doubles, `labels` holds `n` entries.
#[no_mangle]
pub unsafe extern "C" fn gist_topk_accuracy(
    scores: *const f64,
    labels: *const u32,
    n: usize,
    c: usize,
    k: usize,
    out: *mut f64,
) -> GistStatus {
    guard(|| {
        let s = rows(slice_arg(scores, n * c, "scores")?, n, c);
        let l = labels_arg(slice_arg(labels, n, "labels")?);
        *out_arg(out, "out")? = topk_accuracy(&s, &l, k)?;
        Ok(())
    })
}

/// Bootstrap mean and population std of top-`k` accuracy.
///
/// # Safety
/// As for [`gist_topk_accuracy`]; `out_mean` and `out_std` are single doubles.
#[no_mangle]
pub unsafe extern "C" fn gist_bootstrap_accuracy(
    scores: *const f64,
    labels: *const u32,
    n: usize,
    c: usize,
    k: usize,
    resamples: usize,
    seed: u64,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> GistStatus {
    guard(|| {
        let s = rows(slice_arg(scores, n * c, "scores")?, n, c);
        let l = labels_arg(slice_arg(labels, n, "labels")?);
        let mean = out_arg(out_mean, "out_mean")?;
        let std = out_arg(out_std, "out_std")?;
        let stats = bootstrap_accuracy(&s, &l, BootstrapConfig { resamples, seed }, k)?;
        *mean = stats.mean;
        *std = stats.std;
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated UTF-8 path; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn gist_manifest_load(path: *const c_char, out: *mut *mut GistManifest) -> GistStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let m = load_manifest(Path::new(path))?;
        *out = Box::into_raw(Box::new(GistManifest(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle; `out` receives the number of classes.
#[no_mangle]
pub unsafe extern "C" fn gist_manifest_class_count(m: *const GistManifest, out: *mut usize) -> GistStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(m, "manifest")?.0.classes().len();
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle; `out` receives the image count of `split`.
#[no_mangle]
pub unsafe extern "C" fn gist_manifest_split_count(
    m: *const GistManifest,
    split: GistSplit,
    out: *mut usize,
) -> GistStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(m, "manifest")?.0.count(split.into());
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`gist_manifest_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gist_manifest_free(m: *mut GistManifest) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Opens an encoder by model id. `heads_stem` may be null; otherwise it
/// names saved projection heads to apply on top.
///
/// # Safety
/// String arguments are NUL-terminated UTF-8; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn gist_backend_open(
    model_id: *const c_char,
    heads_stem: *const c_char,
    out: *mut *mut GistBackend,
) -> GistStatus {
    guard(|| {
        let model_id = str_arg(model_id, "model_id")?;
        let out = out_arg(out, "out")?;
        let mut backend = Backend::open(model_id)?;
        if !heads_stem.is_null() {
            let (heads, base) = ProjectionHeads::load(Path::new(str_arg(heads_stem, "heads_stem")?))?;
            if base != backend.base_model_id() {
                return Err(Fail::Arg(format!("heads were trained on {base:?}, not {model_id:?}")));
            }
            backend = backend.with_heads(heads)?;
        }
        *out = Box::into_raw(Box::new(GistBackend(backend)));
        Ok(())
    })
}

/// Embedding width produced by the backend.
///
/// # Safety
/// `b` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gist_backend_dim(b: *const GistBackend, out: *mut usize) -> GistStatus {
    guard(|| {
        let b = &ref_arg(b, "backend")?.0;
        *out_arg(out, "out")? = b.heads().map_or(b.base_dim(), ProjectionHeads::out_dim);
        Ok(())
    })
}

/// Text embedding (not normalized) written to `out` (length `d`).
///
/// # Safety
/// `b` must be a live handle, `text` NUL-terminated UTF-8, `out` `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn gist_backend_encode_text(
    b: *const GistBackend,
    text: *const c_char,
    out: *mut f64,
    d: usize,
) -> GistStatus {
    guard(|| {
        let b = &ref_arg(b, "backend")?.0;
        let e = b.encode_text(str_arg(text, "text")?)?;
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: e.dim(),
                actual: d,
            }
            .into());
        }
        slice_mut(out, d, "out")?.copy_from_slice(&e.to_f64());
        Ok(())
    })
}

/// Image embedding of the raw file bytes (not normalized).
///
/// # Safety
/// `bytes` holds `len` bytes; otherwise as [`gist_backend_encode_text`].
#[no_mangle]
pub unsafe extern "C" fn gist_backend_encode_image(
    b: *const GistBackend,
    bytes: *const u8,
    len: usize,
    out: *mut f64,
    d: usize,
) -> GistStatus {
    guard(|| {
        let b = &ref_arg(b, "backend")?.0;
        let e = b.encode_image_bytes(slice_arg(bytes, len, "bytes")?)?;
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: e.dim(),
                actual: d,
            }
            .into());
        }
        slice_mut(out, d, "out")?.copy_from_slice(&e.to_f64());
        Ok(())
    })
}

/// # Safety
/// `b` must come from [`gist_backend_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gist_backend_free(b: *mut GistBackend) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `stem` is a NUL-terminated UTF-8 path stem; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn gist_probe_load(stem: *const c_char, out: *mut *mut GistProbe) -> GistStatus {
    guard(|| {
        let stem = str_arg(stem, "stem")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(GistProbe(LinearProbe::load(Path::new(stem))?)));
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gist_probe_class_count(p: *const GistProbe, out: *mut usize) -> GistStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(p, "probe")?.0.class_order().len();
        Ok(())
    })
}

/// Class logits for one embedding. `out` holds at least the class count.
///
/// # Safety
/// `embedding` holds `d` doubles, `out` holds `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gist_probe_scores(
    p: *const GistProbe,
    embedding: *const f64,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> GistStatus {
    guard(|| {
        let p = &ref_arg(p, "probe")?.0;
        let s = p.scores(slice_arg(embedding, d, "embedding")?)?;
        copy_scores(&s, slice_mut(out, out_len, "out")?)
    })
}

/// # Safety
/// `p` must come from [`gist_probe_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gist_probe_free(p: *mut GistProbe) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `stem` is a NUL-terminated UTF-8 path stem; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn gist_zeroshot_load(stem: *const c_char, out: *mut *mut GistZeroShotHead) -> GistStatus {
    guard(|| {
        let stem = str_arg(stem, "stem")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(GistZeroShotHead(ZeroShotHead::load(Path::new(stem))?)));
        Ok(())
    })
}

/// Cosine similarity to each class embedding.
///
/// # Safety
/// As for [`gist_probe_scores`].
#[no_mangle]
pub unsafe extern "C" fn gist_zeroshot_scores(
    h: *const GistZeroShotHead,
    embedding: *const f64,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> GistStatus {
    guard(|| {
        let h = &ref_arg(h, "head")?.0;
        let s = h.scores(slice_arg(embedding, d, "embedding")?)?;
        copy_scores(&s, slice_mut(out, out_len, "out")?)
    })
}

/// # Safety
/// `h` must come from [`gist_zeroshot_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gist_zeroshot_free(h: *mut GistZeroShotHead) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
